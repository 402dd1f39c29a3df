//! Multiplayer Monte Carlo tree search.
//!
//! Two searchers share one tree representation:
//!
//! * [`run_search`] is the network-guided search. Leaves are scored by an
//!   [`Evaluator`] instead of a random playout, and selection uses
//!   `Q + c_puct * P / (1 + N)`.
//! * [`uct_baseline_search`] is plain UCT with uniform random playouts, the
//!   control agent the learned player is measured against.
//!
//! Both back up a full score vector: every edge accumulates the component
//! belonging to the player who chose it (max^n), so no sign flipping is
//! involved and any number of players works.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{GameState, Move, PlayerId, ScoreVector, StateTensor, ValueVector};
use crate::util::masked_softmax;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("evaluator failed: {0}")]
pub struct EvalError(pub String);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("cannot search from a terminal state")]
    TerminalState,
    #[error("invalid search config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Evaluator(#[from] EvalError),
}

/// Raw network output for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// One logit per action index; illegal entries are ignored by the search.
    pub policy_logits: Vec<f32>,
    pub value: ValueVector,
}

/// Position heuristic: policy logits over the action space and one value per player.
///
/// Implementations must be deterministic for a fixed parameter snapshot and
/// safe to call from several searches at once.
pub trait Evaluator: Sync {
    fn evaluate(&self, tensor: &StateTensor) -> Result<Evaluation, EvalError>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn evaluate(&self, tensor: &StateTensor) -> Result<Evaluation, EvalError> {
        (**self).evaluate(tensor)
    }
}

/// Flat priors and a zero value vector: turns [`run_search`] into an uninformed search.
#[derive(Debug, Clone, Copy)]
pub struct UniformEvaluator {
    pub policy_size: usize,
    pub num_players: usize,
}

impl UniformEvaluator {
    pub fn for_game(game: &crate::game::GameDescriptor) -> Self {
        UniformEvaluator {
            policy_size: game.action_space_size(),
            num_players: game.num_players,
        }
    }
}

impl Evaluator for UniformEvaluator {
    fn evaluate(&self, _tensor: &StateTensor) -> Result<Evaluation, EvalError> {
        Ok(Evaluation {
            policy_logits: vec![0.0; self.policy_size],
            value: ScoreVector::zeros(self.num_players),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SearchConfig {
    pub rollouts_per_turn: u32,
    pub c_puct: f64,
    pub dirichlet_alpha: f64,
    pub noise_epsilon: f64,
    /// 0 selects the most visited move outright.
    pub temperature: f64,
    /// Scale the exploration term by `sqrt(sum_b N(s, b))` as in standard PUCT.
    pub standard_puct_variant: bool,
    /// Mix Dirichlet noise into the root priors on every search.
    pub root_prior_noise: bool,
    /// Break exact selection ties at random instead of by lowest move index.
    pub tie_break_jitter: bool,
    /// Exploration constant of the UCT baseline.
    pub uct_exploration: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            rollouts_per_turn: 50,
            c_puct: 3.0,
            dirichlet_alpha: 1.0,
            noise_epsilon: 0.25,
            temperature: 1.0,
            standard_puct_variant: false,
            root_prior_noise: false,
            tie_break_jitter: false,
            uct_exploration: std::f64::consts::SQRT_2,
        }
    }
}

impl SearchConfig {
    pub fn with_rollouts(mut self, rollouts: u32) -> Self {
        self.rollouts_per_turn = rollouts;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.rollouts_per_turn == 0 {
            return Err(SearchError::InvalidConfig("rollouts_per_turn must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.noise_epsilon) {
            return Err(SearchError::InvalidConfig("noise_epsilon must lie in [0, 1]"));
        }
        if !(self.temperature >= 0.0) {
            return Err(SearchError::InvalidConfig("temperature must be non-negative"));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(SearchError::InvalidConfig("dirichlet_alpha must be positive"));
        }
        Ok(())
    }
}

/// N, W, Q and P for one (state, action) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdgeStats {
    pub visits: u32,
    pub total_value: f64,
    /// `total_value / visits`, 0 while unvisited.
    pub mean_value: f64,
    pub prior: f64,
}

impl EdgeStats {
    pub fn with_prior(prior: f64) -> Self {
        EdgeStats {
            prior,
            ..Default::default()
        }
    }

    pub fn record(&mut self, value: f64) {
        self.visits += 1;
        self.total_value += value;
        self.mean_value = self.total_value / f64::from(self.visits);
    }
}

/// `Q + c_puct * P / (1 + N)`.
pub fn puct_score(edge: &EdgeStats, c_puct: f64) -> f64 {
    edge.mean_value + c_puct * edge.prior / (1.0 + f64::from(edge.visits))
}

/// `Q + c_puct * P * sqrt(parent_visits) / (1 + N)`.
pub fn standard_puct_score(edge: &EdgeStats, c_puct: f64, parent_visits: u32) -> f64 {
    edge.mean_value
        + c_puct * edge.prior * f64::from(parent_visits).sqrt() / (1.0 + f64::from(edge.visits))
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct Edge {
    pub mv: Move,
    pub stats: EdgeStats,
    pub child: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub state: GameState,
    pub player_to_move: PlayerId,
    /// Sorted by move index once expanded.
    pub edges: Vec<Edge>,
    pub terminal_scores: Option<ScoreVector>,
    expanded: bool,
}

impl SearchNode {
    pub fn new(state: GameState) -> Self {
        SearchNode {
            state,
            player_to_move: state.to_move(),
            edges: Vec::new(),
            terminal_scores: state.terminal_scores(),
            expanded: false,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal_scores.is_some()
    }

    pub fn is_expanded(&self) -> bool {
        self.expanded
    }

    pub fn visits(&self) -> u32 {
        self.edges.iter().map(|e| e.stats.visits).sum()
    }

    pub fn edge(&self, mv: Move) -> Option<&Edge> {
        self.edge_index(mv).map(|i| &self.edges[i])
    }

    fn edge_index(&self, mv: Move) -> Option<usize> {
        self.edges.binary_search_by_key(&mv, |e| e.mv).ok()
    }

    /// Creates one edge per legal move with the given priors (indexed by move).
    fn install_edges(&mut self, priors: impl Fn(Move) -> f64) {
        self.edges = self
            .state
            .legal_moves()
            .into_iter()
            .map(|mv| Edge {
                mv,
                stats: EdgeStats::with_prior(priors(mv)),
                child: None,
            })
            .collect();
        self.expanded = true;
    }
}

/// Arena of search nodes; node 0 is the root.
#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub const ROOT: NodeId = 0;

    pub fn new(root: GameState) -> Self {
        SearchTree {
            nodes: vec![SearchNode::new(root)],
        }
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Child behind `edge` of `parent`, created on first use.
    pub fn child(&mut self, parent: NodeId, edge: usize) -> NodeId {
        if let Some(id) = self.nodes[parent].edges[edge].child {
            return id;
        }
        let node = &self.nodes[parent];
        let state = node
            .state
            .apply_move(node.edges[edge].mv)
            .expect("edges only hold legal moves");
        let id = self.nodes.len();
        self.nodes.push(SearchNode::new(state));
        self.nodes[parent].edges[edge].child = Some(id);
        id
    }
}

/// Highest `Q + c·P/(1+N)` score; exact ties go to the lowest move index.
pub fn select_child(node: &SearchNode, c_puct: f64) -> Move {
    let idx = argmax_first(node.edges.iter().map(|e| puct_score(&e.stats, c_puct)));
    node.edges[idx].mv
}

fn argmax_first(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

fn select_edge<R: Rng + ?Sized>(node: &SearchNode, config: &SearchConfig, rng: &mut R) -> usize {
    let parent_visits = node.visits();
    let scores: Vec<f64> = node
        .edges
        .iter()
        .map(|e| {
            if config.standard_puct_variant {
                standard_puct_score(&e.stats, config.c_puct, parent_visits)
            } else {
                puct_score(&e.stats, config.c_puct)
            }
        })
        .collect();
    let best = argmax_first(scores.iter().copied());
    if !config.tie_break_jitter {
        return best;
    }
    let tied: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == scores[best]).collect();
    tied[rng.random_range(0..tied.len())]
}

/// Expands a leaf. Terminal leaves return their true outcome without touching
/// the evaluator; other leaves get priors from a softmax over the legal logits.
pub fn expand_and_evaluate(
    node: &mut SearchNode,
    evaluator: &dyn Evaluator,
) -> Result<ValueVector, SearchError> {
    if let Some(scores) = node.terminal_scores {
        node.expanded = true;
        return Ok(scores);
    }
    let eval = evaluator.evaluate(&node.state.encode())?;
    let logits: Vec<f64> = eval.policy_logits.iter().map(|&l| f64::from(l)).collect();
    let legal: Vec<usize> = node.state.legal_moves().iter().map(|m| m.index()).collect();
    let priors = masked_softmax(&logits, &legal);
    node.install_edges(|mv| priors[mv.index()]);
    Ok(eval.value)
}

/// Adds one visit to every edge on `path`, crediting each edge with the value
/// component of the player who moves at that edge's node.
pub fn backpropagate(tree: &mut SearchTree, path: &[(NodeId, Move)], value: &ValueVector) {
    for &(id, mv) in path {
        let node = tree.node_mut(id);
        let idx = node.edge_index(mv).expect("path move must be an edge of its node");
        let credit = f64::from(value[node.player_to_move]);
        node.edges[idx].stats.record(credit);
    }
}

fn backpropagate_edges(tree: &mut SearchTree, path: &[(NodeId, usize)], value: &ValueVector) {
    for &(id, edge) in path {
        let node = tree.node_mut(id);
        let credit = f64::from(value[node.player_to_move]);
        node.edges[edge].stats.record(credit);
    }
}

/// Probability distribution over a set of moves, kept sorted by move index.
///
/// Moves with probability zero may be present; they are part of the support
/// that root noise is allowed to spread over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveDistribution {
    entries: Vec<(Move, f64)>,
}

impl MoveDistribution {
    pub fn new(mut entries: Vec<(Move, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        MoveDistribution { entries }
    }

    pub fn uniform(moves: &[Move]) -> Self {
        let p = 1.0 / moves.len() as f64;
        Self::new(moves.iter().map(|&m| (m, p)).collect())
    }

    /// `pi(a) ∝ N(a)^(1/τ)`, or a point mass on the most visited move when τ = 0.
    pub fn from_visits(visits: &[(Move, u32)], temperature: f64) -> Self {
        let mut entries: Vec<(Move, f64)> = visits.iter().map(|&(m, _)| (m, 0.0)).collect();
        entries.sort_by_key(|e| e.0);
        let mut sorted = visits.to_vec();
        sorted.sort_by_key(|e| e.0);
        if temperature == 0.0 {
            let best = argmax_first(sorted.iter().map(|&(_, n)| f64::from(n)));
            entries[best].1 = 1.0;
            return MoveDistribution { entries };
        }
        let max = sorted.iter().map(|&(_, n)| n).max().unwrap_or(0);
        if max == 0 {
            return Self::uniform(&sorted.iter().map(|e| e.0).collect::<Vec<_>>());
        }
        let weights: Vec<f64> = sorted
            .iter()
            .map(|&(_, n)| (f64::from(n) / f64::from(max)).powf(1.0 / temperature))
            .collect();
        let total: f64 = weights.iter().sum();
        for (e, w) in entries.iter_mut().zip(weights) {
            e.1 = w / total;
        }
        MoveDistribution { entries }
    }

    /// Sparse view of a dense action-space vector (zero entries dropped).
    pub fn from_dense(probs: &[f32]) -> Self {
        MoveDistribution {
            entries: probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| (Move(i), f64::from(p)))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(Move, f64)] {
        &self.entries
    }

    pub fn moves(&self) -> impl Iterator<Item = Move> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn prob(&self, mv: Move) -> f64 {
        self.entries
            .binary_search_by_key(&mv, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Most probable move; the lowest index wins ties.
    pub fn argmax(&self) -> Move {
        self.entries[argmax_first(self.entries.iter().map(|e| e.1))].0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Move {
        let mut u = rng.random::<f64>() * self.total();
        for &(mv, p) in &self.entries {
            if u < p {
                return mv;
            }
            u -= p;
        }
        // rounding left us past the end: take the last move with mass
        self.entries
            .iter()
            .rev()
            .find(|e| e.1 > 0.0)
            .map_or(self.entries[0].0, |e| e.0)
    }

    /// Dense vector over the action space with zeros off the support.
    pub fn to_dense(&self, action_space: usize) -> Vec<f32> {
        let mut dense = vec![0.0; action_space];
        for &(mv, p) in &self.entries {
            dense[mv.index()] = p as f32;
        }
        dense
    }
}

/// `(1 - epsilon) * pi + epsilon * eta` with `eta ~ Dirichlet(alpha)` over the entries of `pi`.
pub fn apply_root_noise<R: Rng + ?Sized>(
    pi: &MoveDistribution,
    alpha: f64,
    epsilon: f64,
    rng: &mut R,
) -> MoveDistribution {
    if epsilon == 0.0 || pi.entries.is_empty() {
        return pi.clone();
    }
    let eta = dirichlet(pi.entries.len(), alpha, rng);
    MoveDistribution {
        entries: pi
            .entries
            .iter()
            .zip(eta)
            .map(|(&(mv, p), n)| (mv, (1.0 - epsilon) * p + epsilon * n))
            .collect(),
    }
}

fn dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        // every gamma draw underflowed: the limit is a random vertex
        draws.fill(0.0);
        draws[rng.random_range(0..k)] = 1.0;
    }
    draws
}

/// Root statistics of one move after a search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootEdge {
    pub mv: Move,
    pub visits: u32,
    pub mean_value: f64,
    pub prior: f64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub distribution: MoveDistribution,
    pub root_edges: Vec<RootEdge>,
    /// Average of every value vector backed up through the root.
    pub root_value: ValueVector,
    pub rollouts: u32,
}

impl SearchResult {
    fn from_tree(tree: &SearchTree, value_sum: &[f64], rollouts: u32, temperature: f64) -> Self {
        let root = tree.root();
        let root_edges: Vec<RootEdge> = root
            .edges
            .iter()
            .map(|e| RootEdge {
                mv: e.mv,
                visits: e.stats.visits,
                mean_value: e.stats.mean_value,
                prior: e.stats.prior,
            })
            .collect();
        let visits: Vec<(Move, u32)> = root_edges.iter().map(|e| (e.mv, e.visits)).collect();
        let mean: Vec<f32> = value_sum
            .iter()
            .map(|s| (s / f64::from(rollouts.max(1))) as f32)
            .collect();
        SearchResult {
            distribution: MoveDistribution::from_visits(&visits, temperature),
            root_edges,
            root_value: ScoreVector::from_slice(&mean),
            rollouts,
        }
    }

    /// Most visited root move (lowest index on ties).
    pub fn most_visited(&self) -> Move {
        self.root_edges[argmax_first(self.root_edges.iter().map(|e| f64::from(e.visits)))].mv
    }
}

/// Network-guided search from a fresh root.
///
/// The root is expanded before the first rollout so that every rollout adds
/// exactly one visit to a root edge.
pub fn run_search<R: Rng + ?Sized>(
    state: &GameState,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    if state.is_terminal() {
        return Err(SearchError::TerminalState);
    }
    let n = state.game().num_players;
    let mut tree = SearchTree::new(*state);
    expand_and_evaluate(tree.node_mut(SearchTree::ROOT), evaluator)?;
    if config.root_prior_noise && config.noise_epsilon > 0.0 {
        let root = tree.node_mut(SearchTree::ROOT);
        let eta = dirichlet(root.edges.len(), config.dirichlet_alpha, rng);
        for (edge, noise) in root.edges.iter_mut().zip(eta) {
            edge.stats.prior =
                (1.0 - config.noise_epsilon) * edge.stats.prior + config.noise_epsilon * noise;
        }
    }

    let mut value_sum = vec![0.0; n];
    let mut path: Vec<(NodeId, usize)> = Vec::new();
    for _ in 0..config.rollouts_per_turn {
        path.clear();
        let mut id = SearchTree::ROOT;
        let value = loop {
            let node = tree.node(id);
            if !node.is_expanded() || node.is_terminal() {
                break expand_and_evaluate(tree.node_mut(id), evaluator)?;
            }
            let edge = select_edge(node, config, rng);
            path.push((id, edge));
            id = tree.child(id, edge);
        };
        backpropagate_edges(&mut tree, &path, &value);
        for (s, v) in value_sum.iter_mut().zip(value.as_slice()) {
            *s += f64::from(*v);
        }
    }
    Ok(SearchResult::from_tree(
        &tree,
        &value_sum,
        config.rollouts_per_turn,
        config.temperature,
    ))
}

/// Plays uniformly random moves until the game ends.
pub fn random_playout<R: Rng + ?Sized>(state: &GameState, rng: &mut R) -> ScoreVector {
    let mut state = *state;
    loop {
        if let Some(scores) = state.terminal_scores() {
            return scores;
        }
        let moves = state.legal_moves();
        let mv = moves[rng.random_range(0..moves.len())];
        state = state.apply_move(mv).expect("legal move");
    }
}

/// Classic UCT with random playouts and max^n backup.
///
/// Unvisited children are tried first in move order; after that the edge
/// maximising `Q + c * sqrt(ln N_parent / N_child)` is followed.
pub fn uct_baseline_search<R: Rng + ?Sized>(
    state: &GameState,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    if state.is_terminal() {
        return Err(SearchError::TerminalState);
    }
    let n = state.game().num_players;
    let c = config.uct_exploration;
    let mut tree = SearchTree::new(*state);
    let mut value_sum = vec![0.0; n];
    let mut path: Vec<(NodeId, usize)> = Vec::new();

    for _ in 0..config.rollouts_per_turn {
        path.clear();
        let mut id = SearchTree::ROOT;
        let value = loop {
            let node = tree.node_mut(id);
            if let Some(scores) = node.terminal_scores {
                break scores;
            }
            if !node.is_expanded() {
                let k = node.state.legal_moves().len() as f64;
                node.install_edges(|_| 1.0 / k);
            }
            if let Some(edge) = node.edges.iter().position(|e| e.stats.visits == 0) {
                path.push((id, edge));
                let child = tree.child(id, edge);
                break random_playout(&tree.node(child).state, rng);
            }
            let ln_parent = f64::from(node.visits()).ln();
            let edge = argmax_first(node.edges.iter().map(|e| {
                e.stats.mean_value + c * (ln_parent / f64::from(e.stats.visits)).sqrt()
            }));
            path.push((id, edge));
            id = tree.child(id, edge);
        };
        backpropagate_edges(&mut tree, &path, &value);
        for (s, v) in value_sum.iter_mut().zip(value.as_slice()) {
            *s += f64::from(*v);
        }
    }
    Ok(SearchResult::from_tree(
        &tree,
        &value_sum,
        config.rollouts_per_turn,
        config.temperature,
    ))
}
