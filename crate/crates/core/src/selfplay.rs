//! Self-play games and the policy-iteration loop.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{GameDescriptor, GameState, Move, ScoreVector};
use crate::mcts::{apply_root_noise, run_search, Evaluator, SearchConfig, SearchError};
use crate::network::{NetworkEvaluator, Parameters};
use crate::training::{train_step, AdamState, ReplayBuffer, TrainConfig, TrainError, TrainingSample};
use crate::util::{derive_seed, seeded_rng};

#[derive(Debug, Error)]
pub enum SelfPlayError {
    #[error("game record has no outcome")]
    IncompleteRecord,
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SelfPlayError + '_ {
    move |source| SelfPlayError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfPlayConfig {
    pub search: SearchConfig,
    /// Mix Dirichlet noise into the first move's search policy.
    pub first_move_noise: bool,
    /// Play the most visited move from this move number on.
    pub argmax_after_move: Option<usize>,
}

impl Default for SelfPlayConfig {
    fn default() -> Self {
        SelfPlayConfig {
            search: SearchConfig::default(),
            first_move_noise: true,
            argmax_after_move: None,
        }
    }
}

/// A finished (or interrupted) self-play game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub game: String,
    pub moves: Vec<Move>,
    #[serde(skip)]
    pub states: Vec<GameState>,
    /// Search policy recorded at each turn, dense over the action space.
    pub pi: Vec<Vec<f32>>,
    pub z: Option<ScoreVector>,
}

/// Plays one game from the initial position, searching before every move.
///
/// The recorded policy is the search output before noise; the move actually
/// played on turn one is drawn from the noised policy.
pub fn play_training_game<R: Rng + ?Sized>(
    game: &GameDescriptor,
    evaluator: &dyn Evaluator,
    config: &SelfPlayConfig,
    rng: &mut R,
) -> Result<GameRecord, SelfPlayError> {
    let mut state = game.initial_state();
    let mut record = GameRecord {
        game: game.name.to_string(),
        moves: Vec::new(),
        states: Vec::new(),
        pi: Vec::new(),
        z: None,
    };
    let search = SearchConfig {
        temperature: 1.0,
        ..config.search.clone()
    };
    while !state.is_terminal() {
        let result = run_search(&state, evaluator, &search, rng)?;
        let pi = result.distribution;
        let play_pi = if state.move_count() == 0 && config.first_move_noise {
            apply_root_noise(&pi, search.dirichlet_alpha, search.noise_epsilon, rng)
        } else {
            pi.clone()
        };
        let mv = match config.argmax_after_move {
            Some(k) if state.move_count() >= k => play_pi.argmax(),
            _ => play_pi.sample(rng),
        };
        record.states.push(state);
        record.pi.push(pi.to_dense(game.action_space_size()));
        record.moves.push(mv);
        state = state.apply_move(mv).expect("search only proposes legal moves");
    }
    record.z = state.terminal_scores();
    Ok(record)
}

/// One sample per turn, each labelled with the game's outcome.
pub fn to_samples(record: &GameRecord) -> Result<Vec<TrainingSample>, SelfPlayError> {
    let z = record.z.ok_or(SelfPlayError::IncompleteRecord)?;
    if record.states.len() != record.pi.len() {
        return Err(SelfPlayError::IncompleteRecord);
    }
    Ok(record
        .states
        .iter()
        .zip(&record.pi)
        .map(|(s, pi)| TrainingSample {
            tensor: s.encode(),
            pi: pi.clone(),
            z,
        })
        .collect())
}

/// Plays `count` games in parallel; game `i` uses the stream `derive_seed(seed, [i])`.
pub fn play_games(
    game: &GameDescriptor,
    evaluator: &dyn Evaluator,
    config: &SelfPlayConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<GameRecord>, SelfPlayError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded_rng(derive_seed(seed, &[i as u64]));
            play_training_game(game, evaluator, config, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Games played so far, this run and any resumed run included.
    pub games: usize,
    pub buffer_size: usize,
    pub value_mse: f64,
    pub policy_ce: f64,
    pub total: f64,
}

pub const TRAINING_LOG_HEADER: &str = "iteration,games,buffer_size,value_mse,policy_ce,total";

impl IterationLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6}",
            self.iteration, self.games, self.buffer_size, self.value_mse, self.policy_ce, self.total
        )
    }
}

/// Everything a policy-iteration run needs besides the network itself.
#[derive(Debug, Clone)]
pub struct PolicyIteration {
    pub game: GameDescriptor,
    pub selfplay: SelfPlayConfig,
    pub train: TrainConfig,
    pub iterations: usize,
    pub seed: u64,
    /// Receives `checkpoints/`, `training_log.csv`, `games.jsonl` and `replay.jsonl`.
    pub out_dir: Option<PathBuf>,
}

/// Mutable state carried across iterations (and across resumed runs).
pub struct TrainingRun {
    pub params: Parameters,
    pub optimizer: AdamState,
    pub buffer: ReplayBuffer,
    /// Iterations completed so far.
    pub iteration: usize,
    pub games: usize,
}

impl TrainingRun {
    pub fn new(params: Parameters, capacity: Option<usize>) -> Self {
        let optimizer = AdamState::new(&params);
        TrainingRun {
            params,
            optimizer,
            buffer: ReplayBuffer::new(capacity),
            iteration: 0,
            games: 0,
        }
    }

    /// Writes network and optimizer state into `dir`.
    pub fn save_checkpoint(&self, dir: &Path, seed: u64) -> Result<(), SelfPlayError> {
        self.params.save(dir).map_err(TrainError::from)?;
        let extra = serde_json::json!({ "iteration": self.iteration, "games": self.games, "seed": seed });
        self.optimizer.save(&self.params, dir, extra)?;
        Ok(())
    }

    /// Restores network and optimizer from a checkpoint directory.
    pub fn resume(dir: &Path, capacity: Option<usize>) -> Result<Self, SelfPlayError> {
        let params = Parameters::load(dir).map_err(TrainError::from)?;
        let (optimizer, extra) = AdamState::load(&params, dir)?;
        Ok(TrainingRun {
            params,
            optimizer,
            buffer: ReplayBuffer::new(capacity),
            iteration: extra["iteration"].as_u64().unwrap_or(0) as usize,
            games: extra["games"].as_u64().unwrap_or(0) as usize,
        })
    }
}

pub fn checkpoint_dir(out_dir: &Path, iteration: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("iter_{iteration:04}"))
}

/// Alternates self-play and training for `config.iterations` iterations.
///
/// When an output directory is set, the starting parameters are saved as a
/// checkpoint (fresh runs only) and another checkpoint follows every iteration.
pub fn policy_iteration(
    run: &mut TrainingRun,
    config: &PolicyIteration,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<Vec<IterationLog>, SelfPlayError> {
    let mut logs = Vec::with_capacity(config.iterations);
    let files = match &config.out_dir {
        Some(dir) => Some(OutputFiles::open(dir, run.iteration == 0)?),
        None => None,
    };
    if let (Some(dir), 0) = (&config.out_dir, run.iteration) {
        run.save_checkpoint(&checkpoint_dir(dir, 0), config.seed)?;
    }
    for _ in 0..config.iterations {
        let iteration = run.iteration + 1;
        let snapshot = NetworkEvaluator::new(Arc::new(run.params.clone()));
        let records = play_games(
            &config.game,
            &snapshot,
            &config.selfplay,
            config.train.games_per_iteration,
            derive_seed(config.seed, &[1, iteration as u64]),
        )?;
        let mut new_samples = Vec::new();
        for r in &records {
            let samples = to_samples(r)?;
            new_samples.extend(samples.iter().cloned());
            run.buffer.add_game(samples);
        }
        run.games += records.len();

        let mut rng = seeded_rng(derive_seed(config.seed, &[2, iteration as u64]));
        let (mut mse, mut ce, mut total) = (0.0, 0.0, 0.0);
        let steps = config.train.steps_per_iteration;
        for _ in 0..steps {
            let batch = run.buffer.sample_batch(config.train.batch_size, &mut rng)?;
            let terms = train_step(&mut run.params, &mut run.optimizer, &batch, &config.train)?;
            mse += terms.value_mse;
            ce += terms.policy_ce;
            total += terms.total;
        }
        let denom = steps.max(1) as f64;
        run.iteration = iteration;
        let log = IterationLog {
            iteration,
            games: run.games,
            buffer_size: run.buffer.len(),
            value_mse: mse / denom,
            policy_ce: ce / denom,
            total: total / denom,
        };
        if let (Some(dir), Some(files)) = (&config.out_dir, &files) {
            files.append(&log, &records, &new_samples)?;
            run.save_checkpoint(&checkpoint_dir(dir, iteration), config.seed)?;
        }
        on_iteration(&log);
        logs.push(log);
    }
    Ok(logs)
}

struct OutputFiles {
    log: PathBuf,
    games: PathBuf,
    replay: PathBuf,
}

impl OutputFiles {
    fn open(dir: &Path, fresh: bool) -> Result<Self, SelfPlayError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let files = OutputFiles {
            log: dir.join("training_log.csv"),
            games: dir.join("games.jsonl"),
            replay: dir.join("replay.jsonl"),
        };
        if fresh || !files.log.exists() {
            fs::write(&files.log, format!("{TRAINING_LOG_HEADER}\n")).map_err(io_err(&files.log))?;
            for p in [&files.games, &files.replay] {
                File::create(p).map_err(io_err(p))?;
            }
        }
        Ok(files)
    }

    fn append(&self, log: &IterationLog, records: &[GameRecord], samples: &[TrainingSample]) -> Result<(), SelfPlayError> {
        let open = |p: &Path| -> Result<BufWriter<File>, SelfPlayError> {
            Ok(BufWriter::new(OpenOptions::new().append(true).create(true).open(p).map_err(io_err(p))?))
        };
        let mut out = open(&self.log)?;
        writeln!(out, "{}", log.csv_row()).map_err(io_err(&self.log))?;
        out.flush().map_err(io_err(&self.log))?;

        let mut out = open(&self.games)?;
        for r in records {
            let line = serde_json::to_string(r).expect("record serialises");
            writeln!(out, "{line}").map_err(io_err(&self.games))?;
        }
        out.flush().map_err(io_err(&self.games))?;

        let mut out = open(&self.replay)?;
        for s in samples {
            let line = serde_json::to_string(s).expect("sample serialises");
            writeln!(out, "{line}").map_err(io_err(&self.replay))?;
        }
        out.flush().map_err(io_err(&self.replay))
    }
}
