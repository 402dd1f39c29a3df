//! Seat-permuted matches and rollout-ladder gauntlets.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{GameDescriptor, GameState, Move, ScoreVector};
use crate::mcts::{run_search, uct_baseline_search, SearchConfig, SearchError};
use crate::network::{NetworkEvaluator, Parameters};
use crate::util::{derive_seed, seeded_rng, SeededRng};

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("expected {expected} agents, got {got}")]
    WrongAgentCount { expected: usize, got: usize },
    #[error("no agent labelled '{0}'")]
    UnknownLabel(String),
    #[error("search agents need at least one rollout")]
    ZeroRollouts,
    #[error("opponent ladder must be non-empty and strictly increasing")]
    BadLadder,
    #[error("agent '{label}' produced illegal move {mv}")]
    IllegalMove { label: String, mv: Move },
    #[error("agent '{0}' gave up")]
    Aborted(String),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// External move source standing in for a person (terminal, web client, script).
pub trait MoveSource: Send + Sync {
    /// `None` abandons the game.
    fn choose(&self, state: &GameState) -> Option<Move>;
}

#[derive(Clone)]
pub enum AgentKind {
    AlphaZero {
        params: Arc<Parameters>,
        rollouts: u32,
    },
    Mcts {
        rollouts: u32,
    },
    Random,
    HumanProxy(Arc<dyn MoveSource>),
}

impl fmt::Debug for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentKind::AlphaZero { rollouts, .. } => write!(f, "AlphaZero({rollouts})"),
            AgentKind::Mcts { rollouts } => write!(f, "Mcts({rollouts})"),
            AgentKind::Random => f.write_str("Random"),
            AgentKind::HumanProxy(_) => f.write_str("HumanProxy"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub label: String,
}

impl AgentSpec {
    pub fn alphazero(params: Arc<Parameters>, rollouts: u32) -> Self {
        AgentSpec {
            kind: AgentKind::AlphaZero { params, rollouts },
            label: format!("alphazero{rollouts}"),
        }
    }

    pub fn mcts(rollouts: u32) -> Self {
        AgentSpec {
            kind: AgentKind::Mcts { rollouts },
            label: format!("mcts{rollouts}"),
        }
    }

    pub fn random() -> Self {
        AgentSpec {
            kind: AgentKind::Random,
            label: "random".into(),
        }
    }

    pub fn human(source: Arc<dyn MoveSource>) -> Self {
        AgentSpec {
            kind: AgentKind::HumanProxy(source),
            label: "human".into(),
        }
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `alphazero`, `mcts`, `random` or `human`.
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            AgentKind::AlphaZero { .. } => "alphazero",
            AgentKind::Mcts { .. } => "mcts",
            AgentKind::Random => "random",
            AgentKind::HumanProxy(_) => "human",
        }
    }

    fn validate(&self) -> Result<(), ArenaError> {
        match self.kind {
            AgentKind::AlphaZero { rollouts: 0, .. } | AgentKind::Mcts { rollouts: 0 } => Err(ArenaError::ZeroRollouts),
            _ => Ok(()),
        }
    }

    /// Deterministic-strength move: the most visited root edge for search agents.
    ///
    /// `search` supplies every search setting except the rollout count and temperature.
    pub fn select_move(&self, state: &GameState, search: &SearchConfig, rng: &mut SeededRng) -> Result<Move, ArenaError> {
        let mv = match &self.kind {
            AgentKind::AlphaZero { params, rollouts } => {
                let cfg = SearchConfig {
                    rollouts_per_turn: *rollouts,
                    temperature: 0.0,
                    root_prior_noise: false,
                    ..search.clone()
                };
                let eval = NetworkEvaluator::new(params.clone());
                run_search(state, &eval, &cfg, rng)?.distribution.argmax()
            }
            AgentKind::Mcts { rollouts } => {
                let cfg = SearchConfig {
                    rollouts_per_turn: *rollouts,
                    temperature: 0.0,
                    ..search.clone()
                };
                uct_baseline_search(state, &cfg, rng)?.distribution.argmax()
            }
            AgentKind::Random => {
                let moves = state.legal_moves();
                moves[rng.random_range(0..moves.len())]
            }
            AgentKind::HumanProxy(source) => source.choose(state).ok_or_else(|| ArenaError::Aborted(self.label.clone()))?,
        };
        if !state.is_legal(mv) {
            return Err(ArenaError::IllegalMove {
                label: self.label.clone(),
                mv,
            });
        }
        Ok(mv)
    }
}

/// One game of a match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchGame {
    /// `seats[s]` is the index (into the match's agent list) of the agent in seat `s`.
    pub seats: Vec<usize>,
    pub moves: Vec<Move>,
    /// Terminal scores indexed by seat.
    pub scores: ScoreVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub labels: Vec<String>,
    pub games: Vec<MatchGame>,
    /// Sum of each agent's score over all games, indexed like `labels`.
    pub totals: Vec<f64>,
}

impl MatchResult {
    pub fn total(&self, label: &str) -> Result<f64, ArenaError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.totals[i])
            .ok_or_else(|| ArenaError::UnknownLabel(label.to_string()))
    }
}

/// All orderings of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Plays one game with `seats[s]` choosing for player `s`; agent `a` draws from `rngs[a]`.
pub fn play_game(
    game: &GameDescriptor,
    agents: &[AgentSpec],
    seats: &[usize],
    search: &SearchConfig,
    rngs: &mut [SeededRng],
) -> Result<MatchGame, ArenaError> {
    let mut state = game.initial_state();
    let mut moves = Vec::new();
    while !state.is_terminal() {
        let a = seats[state.to_move()];
        let mv = agents[a].select_move(&state, search, &mut rngs[a])?;
        state = state.apply_move(mv).expect("legality checked by the agent wrapper");
        moves.push(mv);
    }
    Ok(MatchGame {
        seats: seats.to_vec(),
        moves,
        scores: state.terminal_scores().expect("loop ends on a terminal state"),
    })
}

/// One game per seat permutation (n! games).
///
/// Game `g` gives agent `a` the stream `derive_seed(seed, [g, a])`, so the
/// outcome does not depend on how games are scheduled.
pub fn run_match(
    agents: &[AgentSpec],
    game: &GameDescriptor,
    search: &SearchConfig,
    seed: u64,
) -> Result<MatchResult, ArenaError> {
    let n = game.num_players;
    if agents.len() != n {
        return Err(ArenaError::WrongAgentCount {
            expected: n,
            got: agents.len(),
        });
    }
    for a in agents {
        a.validate()?;
    }
    let games = permutations(n)
        .into_par_iter()
        .enumerate()
        .map(|(g, seats)| {
            let mut rngs: Vec<SeededRng> = (0..n).map(|a| seeded_rng(derive_seed(seed, &[g as u64, a as u64]))).collect();
            play_game(game, agents, &seats, search, &mut rngs)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut totals = vec![0.0; n];
    for g in &games {
        for (seat, &agent) in g.seats.iter().enumerate() {
            totals[agent] += f64::from(g.scores[seat]);
        }
    }
    Ok(MatchResult {
        labels: agents.iter().map(|a| a.label.clone()).collect(),
        games,
        totals,
    })
}

/// Subject's total minus the mean total of every other agent.
pub fn score_difference(result: &MatchResult, subject: &str) -> Result<f64, ArenaError> {
    let own = result.total(subject)?;
    let others: Vec<f64> = result
        .labels
        .iter()
        .zip(&result.totals)
        .filter(|(l, _)| *l != subject)
        .map(|(_, &t)| t)
        .collect();
    Ok(own - others.iter().sum::<f64>() / others.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GauntletConfig {
    pub subject_rollouts: u32,
    pub opponent_rollout_ladder: Vec<u32>,
    /// Matches (each n! games) per ladder rung, on consecutive seeds.
    pub matches_per_rung: usize,
    /// Replace the AlphaZero subject with plain MCTS at the same rollout count.
    pub control: bool,
}

impl Default for GauntletConfig {
    fn default() -> Self {
        GauntletConfig {
            subject_rollouts: 50,
            opponent_rollout_ladder: vec![50, 100, 200, 400, 800],
            matches_per_rung: 1,
            control: false,
        }
    }
}

impl GauntletConfig {
    pub fn validate(&self) -> Result<(), ArenaError> {
        let ladder = &self.opponent_rollout_ladder;
        if ladder.is_empty() || ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ArenaError::BadLadder);
        }
        if self.subject_rollouts == 0 || ladder[0] == 0 {
            return Err(ArenaError::ZeroRollouts);
        }
        Ok(())
    }

    /// The subject agent: AlphaZero, or MCTS with the same budget under `control`.
    pub fn subject(&self, params: Option<Arc<Parameters>>) -> AgentSpec {
        match params {
            Some(p) if !self.control => AgentSpec::alphazero(p, self.subject_rollouts).labelled("subject"),
            _ => AgentSpec::mcts(self.subject_rollouts).labelled("subject"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GauntletRow {
    pub opponent_rollouts: u32,
    pub subject_total: f64,
    pub opponent_totals: Vec<f64>,
    pub opp_mean_total: f64,
    pub score_difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GauntletMatch {
    pub match_id: usize,
    pub opponent_rollouts: u32,
    pub result: MatchResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GauntletReport {
    pub game: String,
    pub rows: Vec<GauntletRow>,
    pub matches: Vec<GauntletMatch>,
}

/// Subject (agent 0) against n - 1 identical MCTS opponents at each ladder rung.
pub fn run_gauntlet(
    subject: &AgentSpec,
    config: &GauntletConfig,
    game: &GameDescriptor,
    search: &SearchConfig,
    seed: u64,
) -> Result<GauntletReport, ArenaError> {
    config.validate()?;
    let n = game.num_players;
    let mut rows = Vec::new();
    let mut matches = Vec::new();
    for (rung, &r) in config.opponent_rollout_ladder.iter().enumerate() {
        let mut agents = vec![subject.clone()];
        agents.extend((1..n).map(|k| AgentSpec::mcts(r).labelled(format!("mcts{r}_{k}"))));
        let mut totals = vec![0.0; n];
        for m in 0..config.matches_per_rung {
            let result = run_match(&agents, game, search, derive_seed(seed, &[rung as u64, m as u64]))?;
            for (t, x) in totals.iter_mut().zip(&result.totals) {
                *t += x;
            }
            matches.push(GauntletMatch {
                match_id: matches.len(),
                opponent_rollouts: r,
                result,
            });
        }
        let opponent_totals = totals[1..].to_vec();
        let opp_mean_total = opponent_totals.iter().sum::<f64>() / opponent_totals.len() as f64;
        rows.push(GauntletRow {
            opponent_rollouts: r,
            subject_total: totals[0],
            opponent_totals,
            opp_mean_total,
            score_difference: totals[0] - opp_mean_total,
        });
    }
    Ok(GauntletReport {
        game: game.name.to_string(),
        rows,
        matches,
    })
}

impl GauntletReport {
    /// Per-game rows: labels and scores by seat.
    pub fn results_csv(&self) -> String {
        let n = self.matches.first().map_or(0, |m| m.result.labels.len());
        let mut out = String::from("game,match_id,opponent_rollouts,permutation");
        for s in 0..n {
            out.push_str(&format!(",seat{s}"));
        }
        for s in 0..n {
            out.push_str(&format!(",score_seat{s}"));
        }
        out.push('\n');
        for m in &self.matches {
            for g in &m.result.games {
                let perm: Vec<String> = g.seats.iter().map(|s| s.to_string()).collect();
                out.push_str(&format!("{},{},{},{}", self.game, m.match_id, m.opponent_rollouts, perm.join("-")));
                for &a in &g.seats {
                    out.push_str(&format!(",{}", m.result.labels[a]));
                }
                for &v in g.scores.as_slice() {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        out
    }

    /// One row per rung, opponents summarised by their mean total.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("opponent_rollouts,subject_total,opp_mean_total,score_difference\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.opponent_rollouts, r.subject_total, r.opp_mean_total, r.score_difference
            ));
        }
        out
    }
}
