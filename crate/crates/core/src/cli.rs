//! Command-line front end: `train`, `gauntlet`, `play`, `serve` and `plot`.
//!
//! Everything except argument parsing lives here so the subcommands can be
//! driven from tests with in-memory input and output.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::arena::{run_gauntlet, AgentSpec};
use crate::config::ExperimentConfig;
use crate::game::{GameDescriptor, GameState, Move, PIECE_CHARS};
use crate::network::{init_parameters, Parameters};
use crate::plot;
use crate::selfplay::{policy_iteration, PolicyIteration, TrainingRun};
use crate::server::{self, ServerConfig, HUMAN_FACING_ROLLOUTS};
use crate::training::ReplayBuffer;
use crate::util::{derive_seed, seeded_rng, SeededRng};

/// Default location for checkpoints: training output and the checkpoint that other subcommands load.
pub const CHECKPOINT_DIR_ENV: &str = "MULTIZERO_CHECKPOINT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "multizero", version, about = "Multiplayer AlphaZero for Tic-Tac-Mo and Connect 3x3")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run policy iteration and write checkpoints and logs.
    Train(TrainArgs),
    /// Play the subject against MCTS opponents of increasing strength.
    Gauntlet(GauntletArgs),
    /// Play in the terminal against agents.
    Play(PlayArgs),
    /// Host games over HTTP.
    Serve(ServeArgs),
    /// Render gauntlet summaries as SVG charts.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// tictacmo or connect3x3 (may also come from the config file).
    #[arg(long)]
    pub game: Option<String>,
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Self-play games per iteration.
    #[arg(long)]
    pub games: Option<usize>,
    /// Gradient steps per iteration.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Search rollouts per self-play move.
    #[arg(long)]
    pub rollouts: Option<u32>,
    /// Network preset: reference, desk or tiny.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory.
    #[arg(long, env = CHECKPOINT_DIR_ENV, default_value = "multizero-run")]
    pub out: PathBuf,
    /// Continue from a checkpoint directory (network and optimizer state).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GauntletArgs {
    /// Checkpoint directory, or a training output directory (latest checkpoint is used).
    #[arg(long, env = CHECKPOINT_DIR_ENV)]
    pub checkpoint: Option<PathBuf>,
    /// Needed only for `--control` runs without a checkpoint.
    #[arg(long)]
    pub game: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated opponent rollouts, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    pub ladder: Option<Vec<u32>>,
    /// Matches (of n! games each) per ladder rung.
    #[arg(long)]
    pub matches: Option<usize>,
    #[arg(long)]
    pub subject_rollouts: Option<u32>,
    /// Use an MCTS subject with the subject's rollout budget instead of AlphaZero.
    #[arg(long)]
    pub control: bool,
    #[arg(long, default_value = "gauntlet")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Opponent {
    Alphazero,
    Mcts,
    Random,
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    #[arg(long, env = CHECKPOINT_DIR_ENV)]
    pub checkpoint: Option<PathBuf>,
    /// Needed when playing without a checkpoint.
    #[arg(long)]
    pub game: Option<String>,
    /// Seats taken by people at this terminal, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seats: Vec<usize>,
    #[arg(long, value_enum, default_value = "alphazero")]
    pub opponents: Opponent,
    #[arg(long, default_value_t = HUMAN_FACING_ROLLOUTS)]
    pub rollouts: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Checkpoint per game; repeat for several games.
    #[arg(long, env = CHECKPOINT_DIR_ENV, value_delimiter = ',')]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory of static web assets served under `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = HUMAN_FACING_ROLLOUTS)]
    pub rollouts: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// `label=path/to/summary.csv`; repeat to overlay curves.
    #[arg(long = "summary", required = true)]
    pub summaries: Vec<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Accepted for uniformity; plotting draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => train(a, out),
        Command::Gauntlet(a) => gauntlet(a, out),
        Command::Play(a) => play(a, input, out),
        Command::Serve(a) => serve(a, out),
        Command::Plot(a) => plot_cmd(a, out),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| CliError::Usage(e.to_string())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse_game(name: &str) -> Result<GameDescriptor, CliError> {
    GameDescriptor::by_name(name).map_err(|_| CliError::Usage(format!("unknown game '{name}' (expected tictacmo or connect3x3)")))
}

/// Accepts a checkpoint directory or a training output directory.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf, CliError> {
    if path.join("network.json").is_file() {
        return Ok(path.to_path_buf());
    }
    let dir = path.join("checkpoints");
    let latest = fs::read_dir(&dir)
        .ok()
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("network.json").is_file())
        .max();
    latest.ok_or_else(|| CliError::Failed(format!("no checkpoint found at {}", path.display())))
}

fn load_network(path: &Path) -> Result<Parameters, CliError> {
    let dir = resolve_checkpoint(path)?;
    Parameters::load(&dir).map_err(|e| CliError::Failed(format!("cannot load checkpoint {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

fn train(args: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    let game_name = args
        .game
        .clone()
        .or(cfg.game.clone())
        .ok_or_else(|| CliError::Usage("missing game: pass --game tictacmo|connect3x3 or set \"game\" in the config".into()))?;
    let game = parse_game(&game_name)?;
    cfg.game = Some(game.name.to_string());
    if let Some(p) = args.preset {
        cfg.network.preset = Some(p);
    }
    if let Some(i) = args.iterations {
        cfg.iterations = i;
    }
    if let Some(g) = args.games {
        cfg.train.games_per_iteration = g;
    }
    if let Some(s) = args.steps {
        cfg.train.steps_per_iteration = s;
    }
    if let Some(r) = args.rollouts {
        cfg.selfplay.search.rollouts_per_turn = r;
    }
    cfg.selfplay.search.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut run = match &args.resume {
        Some(path) => {
            let dir = resolve_checkpoint(path)?;
            let mut run = TrainingRun::resume(&dir, cfg.train.buffer_capacity).map_err(failed)?;
            if run.params.config().game != game.name {
                return Err(CliError::Usage(format!(
                    "checkpoint is for {}, not {}",
                    run.params.config().game,
                    game.name
                )));
            }
            let replay = args.out.join("replay.jsonl");
            if replay.is_file() {
                run.buffer = ReplayBuffer::load_jsonl(&replay, cfg.train.buffer_capacity).map_err(failed)?;
            }
            writeln!(out, "resuming from {} at iteration {}", dir.display(), run.iteration).map_err(failed)?;
            run
        }
        None => {
            let net = cfg.network.resolve(&game).map_err(|e| CliError::Usage(e.to_string()))?;
            let params = init_parameters(net, &mut seeded_rng(derive_seed(args.seed, &[0])));
            TrainingRun::new(params, cfg.train.buffer_capacity)
        }
    };
    fs::create_dir_all(&args.out).map_err(failed)?;
    write_file(
        &args.out.join("config.json"),
        &serde_json::to_string_pretty(&cfg).expect("config serialises"),
    )?;
    let pi = PolicyIteration {
        game,
        selfplay: cfg.selfplay.clone(),
        train: cfg.train.clone(),
        iterations: cfg.iterations,
        seed: args.seed,
        out_dir: Some(args.out.clone()),
    };
    let mut lines = Vec::new();
    policy_iteration(&mut run, &pi, |log| lines.push(log.csv_row())).map_err(failed)?;
    writeln!(out, "{}", crate::selfplay::TRAINING_LOG_HEADER).map_err(failed)?;
    for l in lines {
        writeln!(out, "{l}").map_err(failed)?;
    }
    writeln!(out, "checkpoints written to {}", args.out.join("checkpoints").display()).map_err(failed)?;
    Ok(())
}

fn gauntlet(args: GauntletArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref())?;
    let mut gcfg = cfg.gauntlet.clone();
    if let Some(l) = args.ladder {
        gcfg.opponent_rollout_ladder = l;
    }
    if let Some(m) = args.matches {
        gcfg.matches_per_rung = m;
    }
    if let Some(r) = args.subject_rollouts {
        gcfg.subject_rollouts = r;
    }
    gcfg.control |= args.control;
    gcfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let params = match (&args.checkpoint, gcfg.control) {
        (Some(p), _) => Some(Arc::new(load_network(p)?)),
        (None, true) => None,
        (None, false) => {
            return Err(CliError::Failed(format!(
                "no checkpoint given (use --checkpoint or {CHECKPOINT_DIR_ENV}), or run with --control"
            )))
        }
    };
    let game = match (&params, args.game.as_deref().or(cfg.game.as_deref())) {
        (Some(p), _) => parse_game(&p.config().game)?,
        (None, Some(name)) => parse_game(name)?,
        (None, None) => return Err(CliError::Usage("--control without a checkpoint needs --game".into())),
    };
    let subject = gcfg.subject(params);
    let report = run_gauntlet(&subject, &gcfg, &game, &cfg.selfplay.search, args.seed).map_err(failed)?;

    fs::create_dir_all(&args.out).map_err(failed)?;
    write_file(&args.out.join("results.csv"), &report.results_csv())?;
    let summary = report.summary_csv();
    write_file(&args.out.join("summary.csv"), &summary)?;
    let rows = plot::read_summary(&args.out.join("summary.csv")).map_err(failed)?;
    let label = if gcfg.control {
        format!("MCTS control ({})", gcfg.subject_rollouts)
    } else {
        format!("AlphaZero ({})", gcfg.subject_rollouts)
    };
    write_file(&args.out.join("scores.svg"), &plot::scores_chart(&label, &rows).map_err(failed)?)?;
    write_file(
        &args.out.join("score_difference.svg"),
        &plot::difference_chart(&[(label, rows)]).map_err(failed)?,
    )?;
    out.write_all(summary.as_bytes()).map_err(failed)?;
    Ok(())
}

fn legend(game: &GameDescriptor) -> String {
    if game.gravity {
        let cols: Vec<String> = (0..game.cols).map(|c| c.to_string()).collect();
        format!("moves are column numbers: {}", cols.join(" "))
    } else {
        let mut s = String::from("moves are cell numbers:\n");
        for r in 0..game.rows {
            let row: Vec<String> = (0..game.cols).map(|c| format!("{:>3}", r * game.cols + c)).collect();
            s.push_str(&row.join(""));
            s.push('\n');
        }
        s
    }
}

fn play(args: PlayArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    let params = match &args.checkpoint {
        Some(p) => Some(Arc::new(load_network(p)?)),
        None => None,
    };
    let game = match (&params, &args.game) {
        (Some(p), _) => parse_game(&p.config().game)?,
        (None, Some(g)) => parse_game(g)?,
        (None, None) => return Err(CliError::Usage("pass --checkpoint or --game".into())),
    };
    if let Some(&bad) = args.seats.iter().find(|&&s| s >= game.num_players) {
        return Err(CliError::Usage(format!("seat {bad} does not exist in a {}-player game", game.num_players)));
    }
    let all_human = (0..game.num_players).all(|s| args.seats.contains(&s));
    let agent = match (args.opponents, params) {
        _ if all_human => AgentSpec::random(),
        (Opponent::Alphazero, Some(p)) => AgentSpec::alphazero(p, args.rollouts),
        (Opponent::Alphazero, None) => {
            return Err(CliError::Failed(format!(
                "AlphaZero opponents need a checkpoint (--checkpoint or {CHECKPOINT_DIR_ENV}); or use --opponents mcts"
            )))
        }
        (Opponent::Mcts, _) => AgentSpec::mcts(args.rollouts),
        (Opponent::Random, _) => AgentSpec::random(),
    };
    let search = crate::mcts::SearchConfig::default();
    let mut rngs: Vec<SeededRng> = (0..game.num_players)
        .map(|s| seeded_rng(derive_seed(args.seed, &[s as u64])))
        .collect();
    let w = |out: &mut dyn Write, s: String| out.write_all(s.as_bytes()).map_err(failed);

    w(out, format!("{}\n", legend(&game)))?;
    let mut state: GameState = game.initial_state();
    while !state.is_terminal() {
        let seat = state.to_move();
        let piece = PIECE_CHARS[seat];
        if args.seats.contains(&seat) {
            w(out, format!("\n{}player {piece} (seat {seat}) to move: ", state.render()))?;
            out.flush().map_err(failed)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(failed)? == 0 {
                w(out, "\ninput closed; game abandoned\n".into())?;
                return Ok(());
            }
            let trimmed = line.trim();
            match trimmed.parse::<usize>().ok().map(Move).filter(|&m| state.is_legal(m)) {
                Some(mv) => state = state.apply_move(mv).expect("checked legal"),
                None => {
                    let legal: Vec<String> = state.legal_moves().iter().map(|m| m.to_string()).collect();
                    w(out, format!("'{trimmed}' is not a legal move; choose one of {}\n", legal.join(" ")))?;
                }
            }
        } else {
            let mv = agent.select_move(&state, &search, &mut rngs[seat]).map_err(failed)?;
            w(out, format!("player {piece} (seat {seat}, {}) plays {mv}\n", agent.label))?;
            state = state.apply_move(mv).expect("agent moves are legal");
        }
    }
    let scores = state.terminal_scores().expect("game over");
    let result = match state.winner() {
        Some(p) => format!("player {} (seat {p}) wins", PIECE_CHARS[p]),
        None => "tie".to_string(),
    };
    w(out, format!("\n{}{result}\nscores: {scores}\n", state.render()))?;
    Ok(())
}

fn serve(args: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut networks = HashMap::new();
    for path in &args.checkpoint {
        let params = load_network(path)?;
        networks.insert(params.config().game.clone(), Arc::new(params));
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address: {e}")))?;
    let mut games: Vec<&String> = networks.keys().collect();
    games.sort();
    writeln!(out, "serving on http://{addr} (networks: {games:?})").map_err(failed)?;
    out.flush().map_err(failed)?;
    let config = ServerConfig {
        networks,
        default_rollouts: args.rollouts,
        seed: args.seed,
        static_dir: args.static_dir,
        ..ServerConfig::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(failed)?;
    runtime.block_on(server::serve(config, addr)).map_err(failed)
}

fn plot_cmd(args: PlotArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut summaries = Vec::new();
    for spec in &args.summaries {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected label=path, got '{spec}'")))?;
        let rows = plot::read_summary(Path::new(path)).map_err(failed)?;
        summaries.push((label.to_string(), rows));
    }
    fs::create_dir_all(&args.out).map_err(failed)?;
    for (label, rows) in &summaries {
        let file = args.out.join(format!("scores_{}.svg", slug(label)));
        write_file(&file, &plot::scores_chart(label, rows).map_err(failed)?)?;
        writeln!(out, "wrote {}", file.display()).map_err(failed)?;
    }
    let file = args.out.join("score_difference.svg");
    write_file(&file, &plot::difference_chart(&summaries).map_err(failed)?)?;
    writeln!(out, "wrote {}", file.display()).map_err(failed)?;
    Ok(())
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}
