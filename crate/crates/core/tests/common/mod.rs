//! Exhaustive game solver used as an oracle by the integration tests.

#![allow(dead_code)]

use std::collections::HashMap;

use multizero::game::{GameState, Move, ScoreVector};

type Key = (Vec<Option<usize>>, usize);

fn key(state: &GameState) -> Key {
    (state.cell_grid().into_iter().flatten().collect(), state.to_move())
}

/// Max^n solver: each player maximises their own component, lowest move index
/// on ties. For two players this is plain minimax.
#[derive(Default)]
pub struct Solver {
    memo: HashMap<Key, ScoreVector>,
}

impl Solver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&mut self, state: &GameState) -> ScoreVector {
        if let Some(scores) = state.terminal_scores() {
            return scores;
        }
        let k = key(state);
        if let Some(v) = self.memo.get(&k) {
            return *v;
        }
        let me = state.to_move();
        let mut best: Option<ScoreVector> = None;
        for mv in state.legal_moves() {
            let v = self.value(&state.apply_move(mv).unwrap());
            if best.is_none_or(|b| v[me] > b[me]) {
                best = Some(v);
            }
        }
        let best = best.expect("non-terminal state has moves");
        self.memo.insert(k, best);
        best
    }

    /// Value of `mv` for the player to move.
    pub fn move_value(&mut self, state: &GameState, mv: Move) -> f32 {
        let me = state.to_move();
        self.value(&state.apply_move(mv).unwrap())[me]
    }

    /// Moves that keep the mover's game-theoretic value.
    pub fn optimal_moves(&mut self, state: &GameState) -> Vec<Move> {
        let best = self.value(state)[state.to_move()];
        state
            .legal_moves()
            .into_iter()
            .filter(|&mv| self.move_value(state, mv) == best)
            .collect()
    }
}

/// Builds a position by playing `moves` from the start.
pub fn play(game: &multizero::game::GameDescriptor, moves: &[usize]) -> GameState {
    moves.iter().fold(game.initial_state(), |s, &m| s.apply_move(Move(m)).unwrap())
}

/// A non-terminal position reached by uniformly random play.
pub fn random_position<R: rand::Rng>(game: &multizero::game::GameDescriptor, rng: &mut R) -> GameState {
    loop {
        let mut state = game.initial_state();
        let depth = rng.random_range(0..game.max_game_length());
        for _ in 0..depth {
            if state.is_terminal() {
                break;
            }
            let moves = state.legal_moves();
            state = state.apply_move(moves[rng.random_range(0..moves.len())]).unwrap();
        }
        if !state.is_terminal() {
            return state;
        }
    }
}
