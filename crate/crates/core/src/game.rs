//! N-player "k in a row" board games.
//!
//! Two games are built in: Tic-Tac-Mo (three players on a 3x5 board) and
//! Connect 3x3 (three players, gravity drops, 6x7 board). Both end at the
//! first completed line of three. Plain 2-player Tic-Tac-Toe is available for
//! oracle tests.

use std::fmt;
use std::ops::Index;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest number of seats any descriptor may declare.
pub const MAX_PLAYERS: usize = 4;
/// Largest board (Connect 3x3 uses all 42 cells).
pub const MAX_CELLS: usize = 42;

const EMPTY: u8 = u8::MAX;
/// Board character for each player.
pub const PIECE_CHARS: [char; MAX_PLAYERS] = ['X', 'O', 'Y', 'Z'];

pub type PlayerId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("illegal move {index}: {reason}")]
    IllegalMove { index: usize, reason: &'static str },
    #[error("the game is already over")]
    GameOver,
    #[error("unknown game '{0}'")]
    UnknownGame(String),
    #[error("invalid game descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("invalid game state: {0}")]
    InvalidState(String),
}

/// Static rules of a game: board size, seat count and drop rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameDescriptor {
    pub name: &'static str,
    pub num_players: usize,
    pub rows: usize,
    pub cols: usize,
    /// Pieces fall to the lowest empty cell of a column and moves are columns.
    pub gravity: bool,
    pub line_length: usize,
}

impl GameDescriptor {
    pub const TIC_TAC_MO: GameDescriptor = GameDescriptor {
        name: "tictacmo",
        num_players: 3,
        rows: 3,
        cols: 5,
        gravity: false,
        line_length: 3,
    };

    pub const CONNECT_3X3: GameDescriptor = GameDescriptor {
        name: "connect3x3",
        num_players: 3,
        rows: 6,
        cols: 7,
        gravity: true,
        line_length: 3,
    };

    /// Classic two-player 3x3 game; used as a solvable reference.
    pub const TIC_TAC_TOE: GameDescriptor = GameDescriptor {
        name: "tictactoe",
        num_players: 2,
        rows: 3,
        cols: 3,
        gravity: false,
        line_length: 3,
    };

    pub fn by_name(name: &str) -> Result<Self, GameError> {
        match name.to_ascii_lowercase().as_str() {
            "tictacmo" | "tic-tac-mo" => Ok(Self::TIC_TAC_MO),
            "connect3x3" | "connect-3x3" => Ok(Self::CONNECT_3X3),
            "tictactoe" | "tic-tac-toe" => Ok(Self::TIC_TAC_TOE),
            _ => Err(GameError::UnknownGame(name.to_string())),
        }
    }

    /// A validated ad-hoc variant, mainly for small solvable test boards.
    pub fn custom(
        num_players: usize,
        rows: usize,
        cols: usize,
        gravity: bool,
        line_length: usize,
    ) -> Result<Self, GameError> {
        let desc = GameDescriptor {
            name: "custom",
            num_players,
            rows,
            cols,
            gravity,
            line_length,
        };
        desc.validate()?;
        Ok(desc)
    }

    fn validate(&self) -> Result<(), GameError> {
        if !(2..=MAX_PLAYERS).contains(&self.num_players) {
            return Err(GameError::InvalidDescriptor(format!(
                "num_players must be in 2..={MAX_PLAYERS}"
            )));
        }
        if self.rows == 0 || self.cols == 0 || self.rows * self.cols > MAX_CELLS {
            return Err(GameError::InvalidDescriptor(format!(
                "board must have between 1 and {MAX_CELLS} cells"
            )));
        }
        if self.line_length == 0 {
            return Err(GameError::InvalidDescriptor("line_length must be positive".into()));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Size of the fixed move-index space: cells, or columns under gravity.
    pub fn action_space_size(&self) -> usize {
        if self.gravity {
            self.cols
        } else {
            self.rows * self.cols
        }
    }

    /// One piece plane and one turn plane per player.
    pub fn encoding_planes(&self) -> usize {
        2 * self.num_players
    }

    pub fn max_game_length(&self) -> usize {
        self.num_cells()
    }

    pub fn initial_state(&self) -> GameState {
        GameState {
            game: *self,
            cells: [EMPTY; MAX_CELLS],
            to_move: 0,
            move_count: 0,
            winner: None,
        }
    }
}

/// A move index: a flat row-major cell for placement games, a column under gravity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Move(pub usize);

impl Move {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-player outcome (or predicted utility) vector.
#[derive(Clone, Copy, PartialEq)]
pub struct ScoreVector {
    len: u8,
    values: [f32; MAX_PLAYERS],
}

/// Network value estimates share the score layout.
pub type ValueVector = ScoreVector;

impl ScoreVector {
    pub fn zeros(num_players: usize) -> Self {
        assert!(num_players <= MAX_PLAYERS, "too many players");
        ScoreVector {
            len: num_players as u8,
            values: [0.0; MAX_PLAYERS],
        }
    }

    /// +1 for the winner, -1 for everybody else.
    pub fn win(num_players: usize, winner: PlayerId) -> Self {
        let mut v = Self::zeros(num_players);
        for (i, slot) in v.values[..num_players].iter_mut().enumerate() {
            *slot = if i == winner { 1.0 } else { -1.0 };
        }
        v
    }

    pub fn from_slice(values: &[f32]) -> Self {
        let mut v = Self::zeros(values.len());
        v.values[..values.len()].copy_from_slice(values);
        v
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values[..self.len as usize]
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.values[..self.len as usize]
    }

    pub fn sum(&self) -> f32 {
        self.as_slice().iter().sum()
    }
}

impl Index<usize> for ScoreVector {
    type Output = f32;

    fn index(&self, i: usize) -> &f32 {
        &self.as_slice()[i]
    }
}

impl fmt::Debug for ScoreVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

impl fmt::Display for ScoreVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.as_slice().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

impl Serialize for ScoreVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScoreVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<f32>::deserialize(d)?;
        if values.len() > MAX_PLAYERS {
            return Err(D::Error::custom("score vector longer than MAX_PLAYERS"));
        }
        Ok(ScoreVector::from_slice(&values))
    }
}

/// Board position plus side to move. Immutable once built; moves return new states.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct GameState {
    game: GameDescriptor,
    cells: [u8; MAX_CELLS],
    to_move: u8,
    move_count: u8,
    winner: Option<u8>,
}

const DIRECTIONS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

impl GameState {
    pub fn game(&self) -> &GameDescriptor {
        &self.game
    }

    pub fn to_move(&self) -> PlayerId {
        self.to_move as usize
    }

    pub fn move_count(&self) -> usize {
        self.move_count as usize
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<PlayerId> {
        let v = self.cells[row * self.game.cols + col];
        (v != EMPTY).then_some(v as usize)
    }

    pub fn winner(&self) -> Option<PlayerId> {
        self.winner.map(usize::from)
    }

    pub fn is_terminal(&self) -> bool {
        self.winner.is_some() || self.move_count() == self.game.num_cells()
    }

    /// Outcome vector once the game has ended, `None` while it is in progress.
    pub fn terminal_scores(&self) -> Option<ScoreVector> {
        let n = self.game.num_players;
        match self.winner {
            Some(w) => Some(ScoreVector::win(n, w as usize)),
            None if self.move_count() == self.game.num_cells() => Some(ScoreVector::zeros(n)),
            None => None,
        }
    }

    /// Legal moves in ascending index order; empty once the game is over.
    pub fn legal_moves(&self) -> Vec<Move> {
        if self.is_terminal() {
            return Vec::new();
        }
        let g = &self.game;
        if g.gravity {
            // a column is open while its top cell is empty
            (0..g.cols).filter(|&c| self.cells[c] == EMPTY).map(Move).collect()
        } else {
            (0..g.num_cells()).filter(|&i| self.cells[i] == EMPTY).map(Move).collect()
        }
    }

    pub fn is_legal(&self, mv: Move) -> bool {
        self.target_cell(mv).is_ok()
    }

    fn target_cell(&self, mv: Move) -> Result<usize, GameError> {
        let g = &self.game;
        let index = mv.index();
        if self.is_terminal() {
            return Err(GameError::GameOver);
        }
        if index >= g.action_space_size() {
            return Err(GameError::IllegalMove {
                index,
                reason: "outside the action space",
            });
        }
        if g.gravity {
            (0..g.rows)
                .rev()
                .map(|r| r * g.cols + index)
                .find(|&cell| self.cells[cell] == EMPTY)
                .ok_or(GameError::IllegalMove {
                    index,
                    reason: "column is full",
                })
        } else if self.cells[index] != EMPTY {
            Err(GameError::IllegalMove {
                index,
                reason: "cell is occupied",
            })
        } else {
            Ok(index)
        }
    }

    /// Places a piece for the side to move and passes the turn on.
    pub fn apply_move(&self, mv: Move) -> Result<GameState, GameError> {
        let cell = self.target_cell(mv)?;
        let mut next = *self;
        next.cells[cell] = self.to_move;
        next.move_count += 1;
        next.to_move = ((self.to_move as usize + 1) % self.game.num_players) as u8;
        if next.completes_line(cell) {
            next.winner = Some(self.to_move);
        }
        Ok(next)
    }

    fn completes_line(&self, cell: usize) -> bool {
        let g = &self.game;
        let owner = self.cells[cell];
        let (row, col) = ((cell / g.cols) as isize, (cell % g.cols) as isize);
        let owned = |r: isize, c: isize| {
            r >= 0
                && c >= 0
                && (r as usize) < g.rows
                && (c as usize) < g.cols
                && self.cells[r as usize * g.cols + c as usize] == owner
        };
        DIRECTIONS.iter().any(|&(dr, dc)| {
            let mut run = 1;
            for sign in [1, -1] {
                let (mut r, mut c) = (row + sign * dr, col + sign * dc);
                while owned(r, c) {
                    run += 1;
                    r += sign * dr;
                    c += sign * dc;
                }
            }
            run >= g.line_length
        })
    }

    /// Neural network input: per player a piece plane and a turn plane.
    pub fn encode(&self) -> StateTensor {
        let g = &self.game;
        let n = g.num_players;
        let area = g.num_cells();
        let mut t = StateTensor::zeros(g.rows, g.cols, g.encoding_planes());
        for (cell, &owner) in self.cells[..area].iter().enumerate() {
            if owner != EMPTY {
                t.data[owner as usize * area + cell] = 1.0;
            }
        }
        let turn_plane = n + self.to_move();
        t.data[turn_plane * area..(turn_plane + 1) * area].fill(1.0);
        t
    }

    /// One character per cell, top row first.
    pub fn render(&self) -> String {
        let g = &self.game;
        let mut out = String::with_capacity(g.rows * (g.cols + 1));
        for r in 0..g.rows {
            for c in 0..g.cols {
                out.push(match self.cell(r, c) {
                    Some(p) => PIECE_CHARS[p],
                    None => '.',
                });
            }
            out.push('\n');
        }
        out
    }

    /// Rebuilds a state from a cell grid, checking turn order and gravity.
    pub fn from_cells(
        game: GameDescriptor,
        grid: &[Vec<Option<PlayerId>>],
    ) -> Result<GameState, GameError> {
        let bad = |msg: String| Err(GameError::InvalidState(msg));
        if grid.len() != game.rows || grid.iter().any(|r| r.len() != game.cols) {
            return bad(format!("expected a {}x{} grid", game.rows, game.cols));
        }
        let mut state = game.initial_state();
        let mut counts = [0usize; MAX_PLAYERS];
        for (r, row) in grid.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if let Some(p) = *cell {
                    if p >= game.num_players {
                        return bad(format!("player {p} out of range"));
                    }
                    state.cells[r * game.cols + c] = p as u8;
                    counts[p] += 1;
                }
            }
        }
        let total: usize = counts.iter().sum();
        // players rotate from seat 0, so earlier seats hold at most one extra piece
        for p in 0..game.num_players {
            let expected = total / game.num_players + usize::from(p < total % game.num_players);
            if counts[p] != expected {
                return bad("piece counts do not match the turn order".into());
            }
        }
        if game.gravity {
            for c in 0..game.cols {
                let mut seen_piece = false;
                for r in 0..game.rows {
                    let occupied = state.cells[r * game.cols + c] != EMPTY;
                    if seen_piece && !occupied {
                        return bad(format!("column {c} has a floating piece"));
                    }
                    seen_piece |= occupied;
                }
            }
        }
        state.move_count = total as u8;
        state.to_move = (total % game.num_players) as u8;
        let winners: Vec<u8> = (0..game.num_cells())
            .filter(|&cell| state.cells[cell] != EMPTY && state.completes_line(cell))
            .map(|cell| state.cells[cell])
            .collect();
        match winners.first() {
            Some(&w) if winners.iter().all(|&x| x == w) => state.winner = Some(w),
            Some(_) => return bad("more than one player has a line".into()),
            None => {}
        }
        Ok(state)
    }

    pub fn cell_grid(&self) -> Vec<Vec<Option<PlayerId>>> {
        (0..self.game.rows)
            .map(|r| (0..self.game.cols).map(|c| self.cell(r, c)).collect())
            .collect()
    }
}

impl fmt::Debug for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "GameState({}, to_move={}, moves={})\n{}",
            self.game.name,
            self.to_move,
            self.move_count,
            self.render()
        )
    }
}

impl fmt::Display for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct GameStateJson {
    game: String,
    cells: Vec<Vec<Option<PlayerId>>>,
    to_move: PlayerId,
    move_count: usize,
}

impl Serialize for GameState {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GameStateJson {
            game: self.game.name.to_string(),
            cells: self.cell_grid(),
            to_move: self.to_move(),
            move_count: self.move_count(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GameState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = GameStateJson::deserialize(d)?;
        let game = GameDescriptor::by_name(&raw.game).map_err(D::Error::custom)?;
        let state = GameState::from_cells(game, &raw.cells).map_err(D::Error::custom)?;
        if state.to_move() != raw.to_move || state.move_count() != raw.move_count {
            return Err(D::Error::custom("toMove/moveCount disagree with the cells"));
        }
        Ok(state)
    }
}

/// Network input planes, stored plane-major (plane, row, col).
///
/// Planes `0..n` mark each player's pieces; planes `n..2n` are the turn
/// indicators, exactly one of which is all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    rows: usize,
    cols: usize,
    planes: usize,
    data: Vec<f32>,
}

impl StateTensor {
    pub fn zeros(rows: usize, cols: usize, planes: usize) -> Self {
        StateTensor {
            rows,
            cols,
            planes,
            data: vec![0.0; rows * cols * planes],
        }
    }

    pub fn from_planes(rows: usize, cols: usize, planes: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols * planes, "tensor data has the wrong length");
        StateTensor {
            rows,
            cols,
            planes,
            data,
        }
    }

    /// (rows, cols, planes)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.planes)
    }

    pub fn get(&self, row: usize, col: usize, plane: usize) -> f32 {
        self.data[(plane * self.rows + row) * self.cols + col]
    }

    pub fn plane(&self, plane: usize) -> &[f32] {
        let area = self.rows * self.cols;
        &self.data[plane * area..(plane + 1) * area]
    }

    /// Plane-major view used by the network.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

impl Serialize for StateTensor {
    /// Nested as `[rows][cols][planes]`.
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let nested: Vec<Vec<Vec<f32>>> = (0..self.rows)
            .map(|r| {
                (0..self.cols)
                    .map(|c| (0..self.planes).map(|p| self.get(r, c, p)).collect())
                    .collect()
            })
            .collect();
        nested.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateTensor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let nested = Vec::<Vec<Vec<f32>>>::deserialize(d)?;
        let rows = nested.len();
        let cols = nested.first().map_or(0, Vec::len);
        let planes = nested.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let mut t = StateTensor::zeros(rows, cols, planes);
        for (r, row) in nested.iter().enumerate() {
            if row.len() != cols {
                return Err(D::Error::custom("ragged tensor rows"));
            }
            for (c, cell) in row.iter().enumerate() {
                if cell.len() != planes {
                    return Err(D::Error::custom("ragged tensor planes"));
                }
                for (p, &v) in cell.iter().enumerate() {
                    t.data[(p * rows + r) * cols + c] = v;
                }
            }
        }
        Ok(t)
    }
}
