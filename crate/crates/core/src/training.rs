//! Replay buffer, Adam optimiser and the gradient step.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, NamedArray};
use crate::game::{ScoreVector, StateTensor};
use crate::network::{self, LossTerms, NetworkError, Parameters, Target};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("non-finite loss at optimiser step {step}: {loss:?}")]
    NonFiniteLoss { step: u64, loss: LossTerms },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("replay file {path}: {message}")]
    Replay { path: String, message: String },
}

/// One position from a self-play game: input tensor, dense search policy and final outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub tensor: StateTensor,
    pub pi: Vec<f32>,
    pub z: ScoreVector,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    samples: VecDeque<TrainingSample>,
    capacity: Option<usize>,
}

impl ReplayBuffer {
    /// `None` keeps every sample ever added.
    pub fn new(capacity: Option<usize>) -> Self {
        ReplayBuffer {
            samples: VecDeque::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn samples(&self) -> impl Iterator<Item = &TrainingSample> {
        self.samples.iter()
    }

    /// Appends in order, evicting the oldest samples beyond capacity.
    pub fn add_game(&mut self, samples: impl IntoIterator<Item = TrainingSample>) {
        self.samples.extend(samples);
        if let Some(cap) = self.capacity {
            while self.samples.len() > cap {
                self.samples.pop_front();
            }
        }
    }

    /// Uniform draw with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<TrainingSample>, TrainError> {
        if self.samples.is_empty() {
            return Err(TrainError::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| self.samples[rng.random_range(0..self.samples.len())].clone())
            .collect())
    }

    /// Writes one JSON object per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<(), TrainError> {
        let err = |e: &dyn std::fmt::Display| TrainError::Replay {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut out = BufWriter::new(File::create(path).map_err(|e| err(&e))?);
        for s in &self.samples {
            serde_json::to_writer(&mut out, s).map_err(|e| err(&e))?;
            out.write_all(b"\n").map_err(|e| err(&e))?;
        }
        out.flush().map_err(|e| err(&e))
    }

    pub fn load_jsonl(path: &Path, capacity: Option<usize>) -> Result<Self, TrainError> {
        let err = |line: usize, e: &dyn std::fmt::Display| TrainError::Replay {
            path: path.display().to_string(),
            message: format!("line {line}: {e}"),
        };
        let file = File::open(path).map_err(|e| err(0, &e))?;
        let mut buffer = ReplayBuffer::new(capacity);
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(i + 1, &e))?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: TrainingSample = serde_json::from_str(&line).map_err(|e| err(i + 1, &e))?;
            buffer.add_game([sample]);
        }
        Ok(buffer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub steps_per_iteration: usize,
    pub games_per_iteration: usize,
    pub buffer_capacity: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            l2: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            steps_per_iteration: 200,
            games_per_iteration: 20,
            buffer_capacity: None,
        }
    }
}

/// First and second moment estimates, one array per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Saves as `optimizer.json` / `optimizer.bin`; `extra` lands in the manifest's meta.
    pub fn save(&self, params: &Parameters, dir: &Path, extra: serde_json::Value) -> Result<(), TrainError> {
        let names: Vec<(String, String)> = params
            .tensors()
            .iter()
            .map(|t| (format!("{}.m", t.name), format!("{}.v", t.name)))
            .collect();
        let mut arrays = Vec::with_capacity(2 * names.len());
        for ((t, (mn, vn)), (m, v)) in params.tensors().iter().zip(&names).zip(self.m.iter().zip(&self.v)) {
            arrays.push(NamedArray {
                name: mn,
                shape: &t.shape,
                data: m,
            });
            arrays.push(NamedArray {
                name: vn,
                shape: &t.shape,
                data: v,
            });
        }
        let meta = serde_json::json!({ "kind": "adam", "step": self.step, "extra": extra });
        checkpoint::write_bundle(dir, "optimizer", meta, &arrays)?;
        Ok(())
    }

    /// Loads moments saved by [`AdamState::save`]; returns the state and the saved `extra`.
    pub fn load(params: &Parameters, dir: &Path) -> Result<(Self, serde_json::Value), TrainError> {
        let bundle = checkpoint::read_bundle(dir, "optimizer")?;
        let mut state = AdamState::new(params);
        if bundle.arrays.len() != 2 * state.m.len() {
            return Err(CheckpointError::Mismatch("optimizer arrays do not match the network".into()).into());
        }
        let mut arrays = bundle.arrays.into_iter();
        for (t, (m, v)) in params.tensors().iter().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
            for (slot, suffix) in [(m, "m"), (v, "v")] {
                let (entry, data) = arrays.next().expect("length checked");
                if entry.name != format!("{}.{suffix}", t.name) || entry.shape != t.shape {
                    return Err(CheckpointError::Mismatch(format!("unexpected optimizer array {}", entry.name)).into());
                }
                *slot = data;
            }
        }
        state.step = bundle.meta["step"].as_u64().unwrap_or(0);
        Ok((state, bundle.meta["extra"].clone()))
    }
}

/// One Adam update on the mean batch loss; returns the loss before the update.
///
/// Batch normalisation statistics from the same pass are blended into the
/// running averages.
pub fn train_step(
    params: &mut Parameters,
    opt: &mut AdamState,
    batch: &[TrainingSample],
    config: &TrainConfig,
) -> Result<LossTerms, TrainError> {
    let tensors: Vec<StateTensor> = batch.iter().map(|s| s.tensor.clone()).collect();
    let targets: Vec<Target> = batch
        .iter()
        .map(|s| Target {
            pi: s.pi.clone(),
            z: s.z,
        })
        .collect();
    let out = network::backward(params, &tensors, &targets, config.l2)?;
    if !out.loss.total.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            step: opt.step,
            loss: out.loss,
        });
    }
    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
        if !tensor.kind.is_learnable() {
            continue;
        }
        let grad = &out.gradients.tensors[i];
        let (m, v) = (&mut opt.m[i], &mut opt.v[i]);
        for k in 0..tensor.data.len() {
            let g = grad[k];
            let mk = b1 * f64::from(m[k]) + (1.0 - b1) * g;
            let vk = b2 * f64::from(v[k]) + (1.0 - b2) * g * g;
            m[k] = mk as f32;
            v[k] = vk as f32;
            let update = config.learning_rate * (mk / bias1) / ((vk / bias2).sqrt() + config.adam_eps);
            tensor.data[k] = (f64::from(tensor.data[k]) - update) as f32;
        }
    }
    params.update_running_stats(&out.norm_stats);
    Ok(out.loss)
}
