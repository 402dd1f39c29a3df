//! JSON-over-HTTP game server for human-vs-agent sessions.
//!
//! | method | path                      | body / result                                  |
//! |--------|---------------------------|------------------------------------------------|
//! | POST   | `/api/game`               | [`CreateGame`] → [`GameView`]                  |
//! | GET    | `/api/game/{id}`          | [`GameView`]                                   |
//! | POST   | `/api/game/{id}/move`     | `{"move": 7}` → [`GameView`] after agent replies |
//! | GET    | `/api/game/{id}/analysis` | `{"pi": [...], "value": [...]}`                |
//! | GET    | `/api/games`              | list of [`GameSummary`]                        |
//!
//! Illegal moves answer 422 with `{"error": reason}`; unknown sessions 404.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};
use uuid::Uuid;

use crate::arena::{AgentSpec, ArenaError};
use crate::game::{GameDescriptor, GameState, Move, PlayerId, ScoreVector};
use crate::mcts::{run_search, uct_baseline_search, SearchConfig};
use crate::network::{NetworkEvaluator, Parameters};
use crate::util::{derive_seed, seeded_rng};

/// Rollouts per move for agents facing people.
pub const HUMAN_FACING_ROLLOUTS: u32 = 500;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Trained networks keyed by game name.
    pub networks: HashMap<String, Arc<Parameters>>,
    pub default_rollouts: u32,
    pub search: SearchConfig,
    pub seed: u64,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            networks: HashMap::new(),
            default_rollouts: HUMAN_FACING_ROLLOUTS,
            search: SearchConfig::default(),
            seed: 0,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentChoice {
    Alphazero,
    Mcts,
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateGame {
    pub game: String,
    #[serde(default)]
    pub human_seats: Vec<PlayerId>,
    /// Agent type for every non-human seat; AlphaZero when a network is loaded, MCTS otherwise.
    pub agents: Option<AgentChoice>,
    pub rollouts: Option<u32>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MoveRequest {
    #[serde(rename = "move")]
    pub mv: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeatView {
    pub seat: PlayerId,
    pub kind: String,
    pub label: String,
}

/// Search output recorded when an agent moved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoveAnalysis {
    pub seat: PlayerId,
    #[serde(rename = "move")]
    pub mv: Move,
    pub pi: Vec<f32>,
    pub value: ScoreVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GameView {
    pub id: Uuid,
    pub game: String,
    pub rows: usize,
    pub cols: usize,
    pub state: GameState,
    pub board: Vec<Vec<Option<PlayerId>>>,
    pub legal_moves: Vec<Move>,
    pub to_move: PlayerId,
    pub human_seats: Vec<PlayerId>,
    pub seats: Vec<SeatView>,
    pub history: Vec<Move>,
    pub terminal: bool,
    pub scores: Option<ScoreVector>,
    pub winner: Option<PlayerId>,
    pub last_analysis: Option<MoveAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GameSummary {
    pub id: Uuid,
    pub game: String,
    pub move_count: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub pi: Vec<f32>,
    pub value: ScoreVector,
}

enum Seat {
    Human,
    Agent(AgentSpec),
}

struct Session {
    id: Uuid,
    game: GameDescriptor,
    seats: Vec<Seat>,
    state: GameState,
    history: Vec<Move>,
    analysis: Vec<Option<MoveAnalysis>>,
    rollouts: u32,
    seed: u64,
}

impl Session {
    fn human_seats(&self) -> Vec<PlayerId> {
        (0..self.seats.len()).filter(|&s| matches!(self.seats[s], Seat::Human)).collect()
    }

    fn view(&self) -> GameView {
        GameView {
            id: self.id,
            game: self.game.name.to_string(),
            rows: self.game.rows,
            cols: self.game.cols,
            state: self.state,
            board: self.state.cell_grid(),
            legal_moves: self.state.legal_moves(),
            to_move: self.state.to_move(),
            human_seats: self.human_seats(),
            seats: self
                .seats
                .iter()
                .enumerate()
                .map(|(seat, s)| match s {
                    Seat::Human => SeatView {
                        seat,
                        kind: "human".into(),
                        label: "human".into(),
                    },
                    Seat::Agent(a) => SeatView {
                        seat,
                        kind: a.kind_name().into(),
                        label: a.label.clone(),
                    },
                })
                .collect(),
            history: self.history.clone(),
            terminal: self.state.is_terminal(),
            scores: self.state.terminal_scores(),
            winner: self.state.winner(),
            last_analysis: self.analysis.iter().rev().flatten().next().cloned(),
        }
    }

    fn summary(&self) -> GameSummary {
        GameSummary {
            id: self.id,
            game: self.game.name.to_string(),
            move_count: self.state.move_count(),
            terminal: self.state.is_terminal(),
        }
    }

    /// Lets agents move until a human is to move or the game ends.
    fn advance_agents(&mut self, search: &SearchConfig) -> Result<(), ArenaError> {
        while !self.state.is_terminal() {
            let seat = self.state.to_move();
            let Seat::Agent(agent) = &self.seats[seat] else {
                break;
            };
            let mut rng = seeded_rng(derive_seed(self.seed, &[self.state.move_count() as u64]));
            let (mv, analysis) = agent_move(agent, &self.state, search, &mut rng)?;
            self.state = self.state.apply_move(mv).expect("agent moves are legal");
            self.history.push(mv);
            self.analysis.push(Some(MoveAnalysis { seat, ..analysis }));
        }
        Ok(())
    }
}

/// Agent move plus the search statistics that produced it.
fn agent_move(
    agent: &AgentSpec,
    state: &GameState,
    search: &SearchConfig,
    rng: &mut crate::util::SeededRng,
) -> Result<(Move, MoveAnalysis), ArenaError> {
    use crate::arena::AgentKind;
    let actions = state.game().action_space_size();
    let result = match &agent.kind {
        AgentKind::AlphaZero { params, rollouts } => {
            let cfg = SearchConfig {
                rollouts_per_turn: *rollouts,
                temperature: 0.0,
                ..search.clone()
            };
            run_search(state, &NetworkEvaluator::new(params.clone()), &cfg, rng)?
        }
        AgentKind::Mcts { rollouts } => {
            let cfg = SearchConfig {
                rollouts_per_turn: *rollouts,
                temperature: 0.0,
                ..search.clone()
            };
            uct_baseline_search(state, &cfg, rng)?
        }
        _ => {
            let mv = agent.select_move(state, search, rng)?;
            let pi = crate::mcts::MoveDistribution::uniform(&state.legal_moves()).to_dense(actions);
            let value = ScoreVector::zeros(state.game().num_players);
            return Ok((mv, MoveAnalysis { seat: 0, mv, pi, value }));
        }
    };
    let mv = result.distribution.argmax();
    let total: f64 = result.root_edges.iter().map(|e| f64::from(e.visits)).sum();
    let mut pi = vec![0.0; actions];
    for e in &result.root_edges {
        pi[e.mv.index()] = (f64::from(e.visits) / total.max(1.0)) as f32;
    }
    Ok((
        mv,
        MoveAnalysis {
            seat: 0,
            mv,
            pi,
            value: result.root_value,
        },
    ))
}

pub struct AppState {
    config: ServerConfig,
    sessions: RwLock<BTreeMap<Uuid, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Arc<Self> {
        Arc::new(AppState {
            config,
            sessions: RwLock::new(BTreeMap::new()),
            counter: AtomicU64::new(0),
        })
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Unprocessable(String),
    BadRequest(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(serde_json::json!({ "error": message }))).into_response()
    }
}

impl From<ArenaError> for ApiError {
    fn from(e: ArenaError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

/// Builds the router; static files (if configured) are served under `/`.
pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.config.static_dir.clone();
    let api = Router::new()
        .route("/api/game", post(create_game))
        .route("/api/game/{id}", get(get_game))
        .route("/api/game/{id}/move", post(make_move))
        .route("/api/game/{id}/analysis", get(analysis))
        .route("/api/games", get(list_games))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

async fn session(state: &AppState, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
    let uuid = Uuid::parse_str(id).map_err(|_| ApiError::NotFound(format!("no game '{id}'")))?;
    state
        .sessions
        .read()
        .await
        .get(&uuid)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("no game '{id}'")))
}

/// Runs agent searches off the async workers while holding the session lock.
async fn advance(app: &Arc<AppState>, session: &Arc<Mutex<Session>>) -> Result<GameView, ApiError> {
    let mut guard = session.clone().lock_owned().await;
    let search = app.config.search.clone();
    tokio::task::spawn_blocking(move || {
        guard.advance_agents(&search)?;
        Ok(guard.view())
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn create_game(
    State(app): State<Arc<AppState>>,
    Json(req): Json<CreateGame>,
) -> Result<Json<GameView>, ApiError> {
    let game = GameDescriptor::by_name(&req.game).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    if let Some(&bad) = req.human_seats.iter().find(|&&s| s >= game.num_players) {
        return Err(ApiError::BadRequest(format!(
            "seat {bad} does not exist in a {}-player game",
            game.num_players
        )));
    }
    let network = app.config.networks.get(game.name).cloned();
    let choice = req.agents.unwrap_or(if network.is_some() {
        AgentChoice::Alphazero
    } else {
        AgentChoice::Mcts
    });
    let rollouts = req.rollouts.unwrap_or(app.config.default_rollouts).max(1);
    let agent = match (choice, network) {
        (AgentChoice::Alphazero, Some(p)) => AgentSpec::alphazero(p, rollouts),
        (AgentChoice::Alphazero, None) => {
            return Err(ApiError::BadRequest(format!("no network loaded for {}", game.name)))
        }
        (AgentChoice::Mcts, _) => AgentSpec::mcts(rollouts),
        (AgentChoice::Random, _) => AgentSpec::random(),
    };
    let seats = (0..game.num_players)
        .map(|s| {
            if req.human_seats.contains(&s) {
                Seat::Human
            } else {
                Seat::Agent(agent.clone())
            }
        })
        .collect();
    let n = app.counter.fetch_add(1, Ordering::Relaxed);
    let id = Uuid::new_v4();
    let session = Arc::new(Mutex::new(Session {
        id,
        game,
        seats,
        state: game.initial_state(),
        history: Vec::new(),
        analysis: Vec::new(),
        rollouts,
        seed: req.seed.unwrap_or_else(|| derive_seed(app.config.seed, &[n])),
    }));
    app.sessions.write().await.insert(id, session.clone());
    Ok(Json(advance(&app, &session).await?))
}

async fn get_game(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<GameView>, ApiError> {
    let s = session(&app, &id).await?;
    let view = s.lock().await.view();
    Ok(Json(view))
}

async fn make_move(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<MoveRequest>,
) -> Result<Json<GameView>, ApiError> {
    let s = session(&app, &id).await?;
    {
        let mut guard = s.lock().await;
        if guard.state.is_terminal() {
            return Err(ApiError::Unprocessable("game is over".into()));
        }
        let seat = guard.state.to_move();
        if !matches!(guard.seats[seat], Seat::Human) {
            return Err(ApiError::Unprocessable(format!("seat {seat} is not a human seat")));
        }
        let mv = Move(req.mv);
        let next = guard
            .state
            .apply_move(mv)
            .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
        guard.state = next;
        guard.history.push(mv);
        guard.analysis.push(None);
    }
    Ok(Json(advance(&app, &s).await?))
}

async fn analysis(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Analysis>, ApiError> {
    let s = session(&app, &id).await?;
    let guard = s.lock_owned().await;
    if guard.state.is_terminal() {
        return Err(ApiError::Unprocessable("game is over".into()));
    }
    let state = guard.state;
    let rollouts = guard.rollouts;
    let seed = derive_seed(guard.seed, &[u64::MAX, state.move_count() as u64]);
    let network = app.config.networks.get(guard.game.name).cloned();
    let search = app.config.search.clone();
    let out = tokio::task::spawn_blocking(move || {
        // the lock is held for the whole search so moves cannot interleave
        let _guard = guard;
        let agent = match network {
            Some(p) => AgentSpec::alphazero(p, rollouts),
            None => AgentSpec::mcts(rollouts),
        };
        agent_move(&agent, &state, &search, &mut seeded_rng(seed))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(Analysis {
        pi: out.1.pi,
        value: out.1.value,
    }))
}

async fn list_games(State(app): State<Arc<AppState>>) -> Json<Vec<GameSummary>> {
    let sessions: Vec<_> = app.sessions.read().await.values().cloned().collect();
    let mut out = Vec::with_capacity(sessions.len());
    for s in sessions {
        out.push(s.lock().await.summary());
    }
    Json(out)
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServerConfig, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(config))).await
}
