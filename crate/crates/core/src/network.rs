//! Two-headed squeeze-and-excitation residual network, written out by hand.
//!
//! Architecture:
//!
//! ```text
//! input (2n planes) -> conv3x3 -> norm -> relu
//!   -> num_blocks x [ y = x + F(SE(x)) ]
//!        SE: channel mean -> dense reduce -> relu -> dense expand -> sigmoid -> rescale
//!        F : norm -> relu -> conv3x3 -> norm -> relu -> conv3x3
//!   -> policy: conv1x1(2) -> relu -> dense(policy_size)             (logits)
//!   -> value : conv1x1(1) -> relu -> dense(hidden) -> relu -> dense(n) -> tanh
//! ```
//!
//! Parameters are stored as f32; every activation and gradient is computed in
//! f64 so the analytic gradients can be checked against finite differences.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, NamedArray};
use crate::game::{GameDescriptor, ScoreVector, StateTensor, ValueVector};
use crate::mcts::{EvalError, Evaluation, Evaluator, MoveDistribution};
use crate::util::masked_softmax;

const NORM_EPS: f64 = 1e-5;
/// Weight of the old value when blending running normalisation statistics.
pub const NORM_MOMENTUM: f64 = 0.9;
const LOG_CLAMP: f64 = 1e-10;
const POLICY_HEAD_CHANNELS: usize = 2;
const VALUE_HEAD_CHANNELS: usize = 1;
/// Largest f32 strictly below one.
const VALUE_LIMIT: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("input shape {got:?} does not match the network's {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Which logits the training softmax normalises over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMask {
    /// Only moves with positive target probability.
    #[default]
    TargetSupport,
    FullActionSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub game: String,
    pub input_planes: usize,
    pub board_rows: usize,
    pub board_cols: usize,
    pub channels: usize,
    pub num_blocks: usize,
    pub se_reduction: usize,
    pub policy_size: usize,
    pub value_size: usize,
    pub value_hidden: usize,
    #[serde(default)]
    pub policy_mask: PolicyMask,
}

impl NetworkConfig {
    /// 64 channels, 8 SE-PRE blocks.
    pub fn reference(game: &GameDescriptor) -> Self {
        Self::sized(game, 64, 8, 8, 64)
    }

    /// Small enough to train for an hour on a laptop CPU.
    pub fn desk(game: &GameDescriptor) -> Self {
        Self::sized(game, 16, 2, 4, 32)
    }

    /// Minimal network for gradient checks.
    pub fn tiny(game: &GameDescriptor) -> Self {
        Self::sized(game, 4, 1, 2, 8)
    }

    pub fn sized(
        game: &GameDescriptor,
        channels: usize,
        num_blocks: usize,
        se_reduction: usize,
        value_hidden: usize,
    ) -> Self {
        NetworkConfig {
            game: game.name.to_string(),
            input_planes: game.encoding_planes(),
            board_rows: game.rows,
            board_cols: game.cols,
            channels,
            num_blocks,
            se_reduction,
            policy_size: game.action_space_size(),
            value_size: game.num_players,
            value_hidden,
            policy_mask: PolicyMask::default(),
        }
    }

    pub fn area(&self) -> usize {
        self.board_rows * self.board_cols
    }

    pub fn se_channels(&self) -> usize {
        (self.channels / self.se_reduction.max(1)).max(1)
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.board_rows, self.board_cols, self.input_planes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Updated by the optimiser.
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Included in the L2 penalty.
    pub fn is_decayed(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    scale: usize,
    shift: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    se_reduce_w: usize,
    se_reduce_b: usize,
    se_expand_w: usize,
    se_expand_b: usize,
    norm1: NormIdx,
    conv1: usize,
    norm2: NormIdx,
    conv2: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    stem_conv: usize,
    stem_norm: NormIdx,
    blocks: Vec<BlockIdx>,
    policy_conv_w: usize,
    policy_conv_b: usize,
    policy_fc_w: usize,
    policy_fc_b: usize,
    value_conv_w: usize,
    value_conv_b: usize,
    value_fc1_w: usize,
    value_fc1_b: usize,
    value_fc2_w: usize,
    value_fc2_b: usize,
}

struct LayoutBuilder {
    specs: Vec<(String, Vec<usize>, ParamKind)>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> usize {
        self.specs.push((name, shape, kind));
        self.specs.len() - 1
    }

    fn norm(&mut self, prefix: &str, channels: usize) -> NormIdx {
        NormIdx {
            scale: self.push(format!("{prefix}.scale"), vec![channels], ParamKind::NormScale),
            shift: self.push(format!("{prefix}.shift"), vec![channels], ParamKind::NormShift),
            mean: self.push(format!("{prefix}.running_mean"), vec![channels], ParamKind::RunningMean),
            var: self.push(format!("{prefix}.running_var"), vec![channels], ParamKind::RunningVar),
        }
    }
}

fn build_layout(cfg: &NetworkConfig) -> (Vec<(String, Vec<usize>, ParamKind)>, Layout) {
    use ParamKind::*;
    let c = cfg.channels;
    let r = cfg.se_channels();
    let area = cfg.area();
    let mut b = LayoutBuilder { specs: Vec::new() };
    let stem_conv = b.push("stem.conv.weight".into(), vec![c, cfg.input_planes, 3, 3], Weight);
    let stem_norm = b.norm("stem.norm", c);
    let blocks = (0..cfg.num_blocks)
        .map(|i| {
            let p = format!("block{i}");
            BlockIdx {
                se_reduce_w: b.push(format!("{p}.se.reduce.weight"), vec![r, c], Weight),
                se_reduce_b: b.push(format!("{p}.se.reduce.bias"), vec![r], Bias),
                se_expand_w: b.push(format!("{p}.se.expand.weight"), vec![c, r], Weight),
                se_expand_b: b.push(format!("{p}.se.expand.bias"), vec![c], Bias),
                norm1: b.norm(&format!("{p}.norm1"), c),
                conv1: b.push(format!("{p}.conv1.weight"), vec![c, c, 3, 3], Weight),
                norm2: b.norm(&format!("{p}.norm2"), c),
                conv2: b.push(format!("{p}.conv2.weight"), vec![c, c, 3, 3], Weight),
            }
        })
        .collect();
    let ph = POLICY_HEAD_CHANNELS;
    let vh = VALUE_HEAD_CHANNELS;
    let layout = Layout {
        stem_conv,
        stem_norm,
        blocks,
        policy_conv_w: b.push("policy.conv.weight".into(), vec![ph, c], Weight),
        policy_conv_b: b.push("policy.conv.bias".into(), vec![ph], Bias),
        policy_fc_w: b.push("policy.fc.weight".into(), vec![cfg.policy_size, ph * area], Weight),
        policy_fc_b: b.push("policy.fc.bias".into(), vec![cfg.policy_size], Bias),
        value_conv_w: b.push("value.conv.weight".into(), vec![vh, c], Weight),
        value_conv_b: b.push("value.conv.bias".into(), vec![vh], Bias),
        value_fc1_w: b.push("value.fc1.weight".into(), vec![cfg.value_hidden, vh * area], Weight),
        value_fc1_b: b.push("value.fc1.bias".into(), vec![cfg.value_hidden], Bias),
        value_fc2_w: b.push("value.fc2.weight".into(), vec![cfg.value_size, cfg.value_hidden], Weight),
        value_fc2_b: b.push("value.fc2.bias".into(), vec![cfg.value_size], Bias),
    };
    (b.specs, layout)
}

/// All network arrays in a fixed enumeration order.
#[derive(Debug, Clone)]
pub struct Parameters {
    config: NetworkConfig,
    tensors: Vec<ParamTensor>,
    layout: Layout,
}

impl Parameters {
    fn filled(config: NetworkConfig, mut fill: impl FnMut(&[usize], ParamKind) -> Vec<f32>) -> Self {
        let (specs, layout) = build_layout(&config);
        let tensors = specs
            .into_iter()
            .map(|(name, shape, kind)| {
                let data = fill(&shape, kind);
                ParamTensor {
                    name,
                    shape,
                    kind,
                    data,
                }
            })
            .collect();
        Parameters {
            config,
            tensors,
            layout,
        }
    }

    /// Every learnable value zero; running variances one.
    pub fn zeros(config: NetworkConfig) -> Self {
        Self::filled(config, |shape, kind| {
            let n = shape.iter().product();
            vec![if kind == ParamKind::RunningVar { 1.0 } else { 0.0 }; n]
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn learnable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.kind.is_learnable())
            .map(|t| t.data.len())
            .sum()
    }

    fn p(&self, idx: usize) -> &[f32] {
        &self.tensors[idx].data
    }

    pub fn save(&self, dir: &Path) -> Result<(), NetworkError> {
        let arrays: Vec<NamedArray<'_>> = self
            .tensors
            .iter()
            .map(|t| NamedArray {
                name: &t.name,
                shape: &t.shape,
                data: &t.data,
            })
            .collect();
        let meta = serde_json::json!({ "kind": "network", "config": self.config });
        checkpoint::write_bundle(dir, "network", meta, &arrays)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, NetworkError> {
        let bundle = checkpoint::read_bundle(dir, "network")?;
        let config: NetworkConfig = serde_json::from_value(bundle.meta["config"].clone())
            .map_err(|e| CheckpointError::Mismatch(format!("bad network config: {e}")))?;
        let mut params = Parameters::zeros(config);
        if bundle.arrays.len() != params.tensors.len() {
            return Err(CheckpointError::Mismatch(format!(
                "expected {} arrays, found {}",
                params.tensors.len(),
                bundle.arrays.len()
            ))
            .into());
        }
        for (t, (entry, data)) in params.tensors.iter_mut().zip(bundle.arrays) {
            if t.name != entry.name || t.shape != entry.shape {
                return Err(CheckpointError::Mismatch(format!(
                    "array {} {:?} does not match expected {} {:?}",
                    entry.name, entry.shape, t.name, t.shape
                ))
                .into());
            }
            t.data = data;
        }
        Ok(params)
    }

    /// `l2 * sum(w^2)` over weight tensors only.
    pub fn l2_penalty(&self, l2: f64) -> f64 {
        l2 * self
            .tensors
            .iter()
            .filter(|t| t.kind.is_decayed())
            .flat_map(|t| t.data.iter())
            .map(|&w| f64::from(w) * f64::from(w))
            .sum::<f64>()
    }

    /// Blends batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &BatchNormStats) {
        for (idx, (mean, var)) in stats.layers.iter() {
            let m = NORM_MOMENTUM;
            for (r, &b) in self.tensors[idx.mean].data.iter_mut().zip(mean) {
                *r = (m * f64::from(*r) + (1.0 - m) * b) as f32;
            }
            for (r, &b) in self.tensors[idx.var].data.iter_mut().zip(var) {
                *r = (m * f64::from(*r) + (1.0 - m) * b) as f32;
            }
        }
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`), unit norm scales, zero shifts and biases.
pub fn init_parameters<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Parameters {
    Parameters::filled(config, |shape, kind| {
        let n: usize = shape.iter().product();
        match kind {
            ParamKind::Weight => {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                (0..n).map(|_| normal.sample(rng) as f32).collect()
            }
            ParamKind::NormScale | ParamKind::RunningVar => vec![1.0; n],
            _ => vec![0.0; n],
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    pub policy_logits: Vec<f32>,
    pub value: ValueVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossTerms {
    pub value_mse: f64,
    pub policy_ce: f64,
    pub l2_penalty: f64,
    pub total: f64,
}

/// Training target of one sample: dense policy and outcome vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub pi: Vec<f32>,
    pub z: ScoreVector,
}

/// d(loss)/d(parameter), one array per parameter tensor (zero for running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(params: &Parameters) -> Self {
        Gradients {
            tensors: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Normalisation layer with its batch mean and unbiased variance per channel.
type LayerStats = (NormIdx, (Vec<f64>, Vec<f64>));

/// Per-layer batch mean and unbiased variance gathered during a training pass.
#[derive(Debug, Clone)]
pub struct BatchNormStats {
    layers: Vec<LayerStats>,
}

#[derive(Clone, Copy, PartialEq)]
enum NormMode {
    Batch,
    Running,
}

struct Dims {
    batch: usize,
    h: usize,
    w: usize,
}

impl Dims {
    fn area(&self) -> usize {
        self.h * self.w
    }
}

fn conv3x3_forward(input: &[f64], weight: &[f32], cin: usize, cout: usize, d: &Dims) -> Vec<f64> {
    let (h, w, area) = (d.h, d.w, d.area());
    let mut out = vec![0.0; d.batch * cout * area];
    for b in 0..d.batch {
        for o in 0..cout {
            let out_plane = &mut out[(b * cout + o) * area..][..area];
            for i in 0..cin {
                let in_plane = &input[(b * cin + i) * area..][..area];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize) as usize);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                        let wv = f64::from(weight[((o * cin + i) * 3 + ky) * 3 + kx]);
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let src = &in_plane[iy * w..][..w];
                            let dst = &mut out_plane[y * w..][..w];
                            for x in x0..x1 {
                                dst[x] += wv * src[(x as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates the weight gradient into `dweight`; returns the input gradient when asked.
fn conv3x3_backward(
    input: &[f64],
    weight: &[f32],
    dout: &[f64],
    cin: usize,
    cout: usize,
    d: &Dims,
    dweight: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let (h, w, area) = (d.h, d.w, d.area());
    let mut din = want_input_grad.then(|| vec![0.0; input.len()]);
    for b in 0..d.batch {
        for o in 0..cout {
            let g_plane = &dout[(b * cout + o) * area..][..area];
            for i in 0..cin {
                let in_off = (b * cin + i) * area;
                let in_plane = &input[in_off..][..area];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, y1) = ((-dy).max(0) as usize, (h as isize - dy).min(h as isize) as usize);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let (x0, x1) = ((-dx).max(0) as usize, (w as isize - dx).min(w as isize) as usize);
                        let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                        let wv = f64::from(weight[widx]);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            for x in x0..x1 {
                                let ix = (x as isize + dx) as usize;
                                let g = g_plane[y * w + x];
                                acc += g * in_plane[iy * w + ix];
                                if let Some(din) = din.as_mut() {
                                    din[in_off + iy * w + ix] += wv * g;
                                }
                            }
                        }
                        dweight[widx] += acc;
                    }
                }
            }
        }
    }
    din
}

fn pointwise_forward(input: &[f64], weight: &[f32], bias: &[f32], cin: usize, cout: usize, d: &Dims) -> Vec<f64> {
    let area = d.area();
    let mut out = vec![0.0; d.batch * cout * area];
    for b in 0..d.batch {
        for o in 0..cout {
            let dst = &mut out[(b * cout + o) * area..][..area];
            dst.fill(f64::from(bias[o]));
            for i in 0..cin {
                let wv = f64::from(weight[o * cin + i]);
                let src = &input[(b * cin + i) * area..][..area];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wv * s;
                }
            }
        }
    }
    out
}

fn pointwise_backward(
    input: &[f64],
    weight: &[f32],
    dout: &[f64],
    cin: usize,
    cout: usize,
    d: &Dims,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let area = d.area();
    let mut din = vec![0.0; input.len()];
    for b in 0..d.batch {
        for o in 0..cout {
            let g = &dout[(b * cout + o) * area..][..area];
            dbias[o] += g.iter().sum::<f64>();
            for i in 0..cin {
                let off = (b * cin + i) * area;
                let src = &input[off..][..area];
                dweight[o * cin + i] += g.iter().zip(src).map(|(g, s)| g * s).sum::<f64>();
                let wv = f64::from(weight[o * cin + i]);
                for (dst, g) in din[off..off + area].iter_mut().zip(g) {
                    *dst += wv * g;
                }
            }
        }
    }
    din
}

/// `out[b][j] = sum_k W[j][k] in[b][k] + bias[j]`.
fn dense_forward(input: &[f64], weight: &[f32], bias: &[f32], nin: usize, nout: usize, batch: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * nout];
    for b in 0..batch {
        let x = &input[b * nin..][..nin];
        for j in 0..nout {
            let row = &weight[j * nin..][..nin];
            out[b * nout + j] =
                f64::from(bias[j]) + row.iter().zip(x).map(|(&w, &v)| f64::from(w) * v).sum::<f64>();
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    input: &[f64],
    weight: &[f32],
    dout: &[f64],
    nin: usize,
    nout: usize,
    batch: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut din = vec![0.0; batch * nin];
    for b in 0..batch {
        let x = &input[b * nin..][..nin];
        let dx = &mut din[b * nin..][..nin];
        for j in 0..nout {
            let g = dout[b * nout + j];
            dbias[j] += g;
            let row = &weight[j * nin..][..nin];
            let drow = &mut dweight[j * nin..][..nin];
            for k in 0..nin {
                drow[k] += g * x[k];
                dx[k] += g * f64::from(row[k]);
            }
        }
    }
    din
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Zeroes the gradient wherever the relu output was not positive.
fn relu_backward(out: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn norm_forward(
    x: &[f64],
    params: &Parameters,
    idx: NormIdx,
    channels: usize,
    d: &Dims,
    mode: NormMode,
    stats: &mut Vec<LayerStats>,
) -> (Vec<f64>, NormCache) {
    let area = d.area();
    let count = (d.batch * area) as f64;
    let scale = params.p(idx.scale);
    let shift = params.p(idx.shift);
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    match mode {
        NormMode::Running => {
            for c in 0..channels {
                mean[c] = f64::from(params.p(idx.mean)[c]);
                var[c] = f64::from(params.p(idx.var)[c]);
            }
        }
        NormMode::Batch => {
            for c in 0..channels {
                let vals = (0..d.batch).flat_map(|b| &x[(b * channels + c) * area..][..area]);
                mean[c] = vals.clone().sum::<f64>() / count;
                var[c] = vals.map(|v| (v - mean[c]).powi(2)).sum::<f64>() / count;
            }
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            stats.push((idx, (mean.clone(), var.iter().map(|v| v * unbiased).collect())));
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..d.batch {
        for c in 0..channels {
            let off = (b * channels + c) * area;
            let (g, s) = (f64::from(scale[c]), f64::from(shift[c]));
            for k in off..off + area {
                xhat[k] = (x[k] - mean[c]) * inv_std[c];
                y[k] = g * xhat[k] + s;
            }
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Backward of batch-statistics normalisation.
fn norm_backward(
    dy: &[f64],
    cache: &NormCache,
    params: &Parameters,
    idx: NormIdx,
    channels: usize,
    d: &Dims,
    grads: &mut Gradients,
) -> Vec<f64> {
    let area = d.area();
    let count = (d.batch * area) as f64;
    let scale = params.p(idx.scale);
    let mut dx = vec![0.0; dy.len()];
    for c in 0..channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..d.batch {
            let off = (b * channels + c) * area;
            for k in off..off + area {
                sum_dy += dy[k];
                sum_dy_xhat += dy[k] * cache.xhat[k];
            }
        }
        grads.tensors[idx.scale][c] += sum_dy_xhat;
        grads.tensors[idx.shift][c] += sum_dy;
        let factor = f64::from(scale[c]) * cache.inv_std[c] / count;
        for b in 0..d.batch {
            let off = (b * channels + c) * area;
            for k in off..off + area {
                dx[k] = factor * (count * dy[k] - sum_dy - cache.xhat[k] * sum_dy_xhat);
            }
        }
    }
    dx
}

struct BlockCache {
    x: Vec<f64>,
    squeezed: Vec<f64>,
    reduced: Vec<f64>,
    gate: Vec<f64>,
    norm1: NormCache,
    act1: Vec<f64>,
    norm2: NormCache,
    act2: Vec<f64>,
}

struct ForwardPass {
    input: Vec<f64>,
    stem_norm: NormCache,
    stem_act: Vec<f64>,
    blocks: Vec<BlockCache>,
    trunk: Vec<f64>,
    policy_act: Vec<f64>,
    value_act: Vec<f64>,
    value_hidden: Vec<f64>,
    logits: Vec<f64>,
    values: Vec<f64>,
    norm_stats: Vec<LayerStats>,
}

fn gather_input(params: &Parameters, batch: &[StateTensor]) -> Result<Vec<f64>, NetworkError> {
    if batch.is_empty() {
        return Err(NetworkError::EmptyBatch);
    }
    let expected = params.config.input_shape();
    let mut input = Vec::with_capacity(batch.len() * batch[0].as_slice().len());
    for t in batch {
        if t.shape() != expected {
            return Err(NetworkError::ShapeMismatch {
                expected,
                got: t.shape(),
            });
        }
        input.extend(t.as_slice().iter().map(|&v| f64::from(v)));
    }
    Ok(input)
}

fn run_forward(params: &Parameters, input: Vec<f64>, batch: usize, mode: NormMode) -> ForwardPass {
    let cfg = &params.config;
    let l = &params.layout;
    let d = Dims {
        batch,
        h: cfg.board_rows,
        w: cfg.board_cols,
    };
    let area = d.area();
    let c = cfg.channels;
    let r = cfg.se_channels();
    let mut norm_stats = Vec::new();

    let stem = conv3x3_forward(&input, params.p(l.stem_conv), cfg.input_planes, c, &d);
    let (stem_normed, stem_norm) = norm_forward(&stem, params, l.stem_norm, c, &d, mode, &mut norm_stats);
    let stem_act = relu(&stem_normed);

    let mut x = stem_act.clone();
    let mut blocks = Vec::with_capacity(l.blocks.len());
    for bi in &l.blocks {
        let squeezed: Vec<f64> = x.chunks(area).map(|p| p.iter().sum::<f64>() / area as f64).collect();
        let reduced = relu(&dense_forward(&squeezed, params.p(bi.se_reduce_w), params.p(bi.se_reduce_b), c, r, batch));
        let gate: Vec<f64> = dense_forward(&reduced, params.p(bi.se_expand_w), params.p(bi.se_expand_b), r, c, batch)
            .into_iter()
            .map(sigmoid)
            .collect();
        let gated: Vec<f64> = x
            .chunks(area)
            .zip(&gate)
            .flat_map(|(plane, &g)| plane.iter().map(move |v| v * g))
            .collect();
        let (n1, norm1) = norm_forward(&gated, params, bi.norm1, c, &d, mode, &mut norm_stats);
        let act1 = relu(&n1);
        let conv1 = conv3x3_forward(&act1, params.p(bi.conv1), c, c, &d);
        let (n2, norm2) = norm_forward(&conv1, params, bi.norm2, c, &d, mode, &mut norm_stats);
        let act2 = relu(&n2);
        let conv2 = conv3x3_forward(&act2, params.p(bi.conv2), c, c, &d);
        let y: Vec<f64> = x.iter().zip(&conv2).map(|(a, b)| a + b).collect();
        blocks.push(BlockCache {
            x,
            squeezed,
            reduced,
            gate,
            norm1,
            act1,
            norm2,
            act2,
        });
        x = y;
    }
    let trunk = x;

    let ph = POLICY_HEAD_CHANNELS;
    let policy_act = relu(&pointwise_forward(&trunk, params.p(l.policy_conv_w), params.p(l.policy_conv_b), c, ph, &d));
    let logits = dense_forward(&policy_act, params.p(l.policy_fc_w), params.p(l.policy_fc_b), ph * area, cfg.policy_size, batch);

    let vh = VALUE_HEAD_CHANNELS;
    let value_act = relu(&pointwise_forward(&trunk, params.p(l.value_conv_w), params.p(l.value_conv_b), c, vh, &d));
    let value_hidden = relu(&dense_forward(
        &value_act,
        params.p(l.value_fc1_w),
        params.p(l.value_fc1_b),
        vh * area,
        cfg.value_hidden,
        batch,
    ));
    let values: Vec<f64> = dense_forward(
        &value_hidden,
        params.p(l.value_fc2_w),
        params.p(l.value_fc2_b),
        cfg.value_hidden,
        cfg.value_size,
        batch,
    )
    .into_iter()
    .map(f64::tanh)
    .collect();

    ForwardPass {
        input,
        stem_norm,
        stem_act,
        blocks,
        trunk,
        policy_act,
        value_act,
        value_hidden,
        logits,
        values,
        norm_stats,
    }
}

/// Inference pass using the running normalisation statistics.
pub fn forward(params: &Parameters, batch: &[StateTensor]) -> Result<Vec<NetworkOutput>, NetworkError> {
    let input = gather_input(params, batch)?;
    let pass = run_forward(params, input, batch.len(), NormMode::Running);
    let cfg = &params.config;
    Ok((0..batch.len())
        .map(|b| {
            let value: Vec<f32> = pass.values[b * cfg.value_size..][..cfg.value_size]
                .iter()
                .map(|&v| (v as f32).clamp(-VALUE_LIMIT, VALUE_LIMIT))
                .collect();
            NetworkOutput {
                policy_logits: pass.logits[b * cfg.policy_size..][..cfg.policy_size]
                    .iter()
                    .map(|&v| v as f32)
                    .collect(),
                value: ScoreVector::from_slice(&value),
            }
        })
        .collect())
}

fn policy_support(pi: &[f32], mask: PolicyMask) -> Vec<usize> {
    match mask {
        PolicyMask::TargetSupport => (0..pi.len()).filter(|&i| pi[i] > 0.0).collect(),
        PolicyMask::FullActionSpace => (0..pi.len()).collect(),
    }
}

struct SampleLoss {
    value_mse: f64,
    policy_ce: f64,
    dlogits: Vec<f64>,
    dvalues: Vec<f64>,
}

/// Loss of one sample and its derivative w.r.t. logits and (post-tanh) values.
fn sample_loss(logits: &[f64], values: &[f64], pi: &[f32], z: &[f32], mask: PolicyMask) -> SampleLoss {
    let n = values.len() as f64;
    let value_mse = values
        .iter()
        .zip(z)
        .map(|(&v, &z)| (f64::from(z) - v).powi(2))
        .sum::<f64>()
        / n;
    let dvalues = values.iter().zip(z).map(|(&v, &z)| 2.0 * (v - f64::from(z)) / n).collect();

    let support = policy_support(pi, mask);
    let p = masked_softmax(logits, &support);
    let pi_mass: f64 = support.iter().map(|&a| f64::from(pi[a])).sum();
    let policy_ce = support
        .iter()
        .fold(0.0, |acc, &a| acc - f64::from(pi[a]) * p[a].max(LOG_CLAMP).ln());
    let mut dlogits = vec![0.0; logits.len()];
    for &a in &support {
        dlogits[a] = p[a] * pi_mass - f64::from(pi[a]);
    }
    SampleLoss {
        value_mse,
        policy_ce,
        dlogits,
        dvalues,
    }
}

/// Loss of one output against its targets, plus the weight penalty.
pub fn loss(
    output: &NetworkOutput,
    target_pi: &MoveDistribution,
    target_z: &ScoreVector,
    params: &Parameters,
    l2: f64,
) -> LossTerms {
    let logits: Vec<f64> = output.policy_logits.iter().map(|&v| f64::from(v)).collect();
    let values: Vec<f64> = output.value.as_slice().iter().map(|&v| f64::from(v)).collect();
    let pi = target_pi.to_dense(logits.len());
    let s = sample_loss(&logits, &values, &pi, target_z.as_slice(), params.config.policy_mask);
    let l2_penalty = params.l2_penalty(l2);
    LossTerms {
        value_mse: s.value_mse,
        policy_ce: s.policy_ce,
        l2_penalty,
        total: s.value_mse + s.policy_ce + l2_penalty,
    }
}

fn check_targets(params: &Parameters, batch: &[StateTensor], targets: &[Target]) {
    assert_eq!(batch.len(), targets.len(), "one target per input");
    for t in targets {
        assert_eq!(t.pi.len(), params.config.policy_size, "dense policy target size");
        assert_eq!(t.z.len(), params.config.value_size, "outcome vector size");
    }
}

fn batch_losses(params: &Parameters, pass: &ForwardPass, targets: &[Target], l2: f64) -> (LossTerms, Vec<SampleLoss>) {
    let cfg = &params.config;
    let batch = targets.len();
    let per_sample: Vec<SampleLoss> = targets
        .iter()
        .enumerate()
        .map(|(b, t)| {
            sample_loss(
                &pass.logits[b * cfg.policy_size..][..cfg.policy_size],
                &pass.values[b * cfg.value_size..][..cfg.value_size],
                &t.pi,
                t.z.as_slice(),
                cfg.policy_mask,
            )
        })
        .collect();
    let value_mse = per_sample.iter().map(|s| s.value_mse).sum::<f64>() / batch as f64;
    let policy_ce = per_sample.iter().map(|s| s.policy_ce).sum::<f64>() / batch as f64;
    let l2_penalty = params.l2_penalty(l2);
    (
        LossTerms {
            value_mse,
            policy_ce,
            l2_penalty,
            total: value_mse + policy_ce + l2_penalty,
        },
        per_sample,
    )
}

/// Mean training-mode loss of a batch (normalisation uses batch statistics).
pub fn batch_loss(params: &Parameters, batch: &[StateTensor], targets: &[Target], l2: f64) -> Result<LossTerms, NetworkError> {
    check_targets(params, batch, targets);
    let input = gather_input(params, batch)?;
    let pass = run_forward(params, input, batch.len(), NormMode::Batch);
    Ok(batch_losses(params, &pass, targets, l2).0)
}

/// Result of a training-mode forward and backward pass.
pub struct Backward {
    pub loss: LossTerms,
    pub gradients: Gradients,
    pub norm_stats: BatchNormStats,
}

/// Exact gradients of the mean batch loss (plus L2 penalty) in training mode.
pub fn backward(params: &Parameters, batch: &[StateTensor], targets: &[Target], l2: f64) -> Result<Backward, NetworkError> {
    check_targets(params, batch, targets);
    let input = gather_input(params, batch)?;
    let nb = batch.len();
    let pass = run_forward(params, input, nb, NormMode::Batch);
    let (loss, per_sample) = batch_losses(params, &pass, targets, l2);

    let cfg = &params.config;
    let l = &params.layout;
    let d = Dims {
        batch: nb,
        h: cfg.board_rows,
        w: cfg.board_cols,
    };
    let area = d.area();
    let c = cfg.channels;
    let r = cfg.se_channels();
    let inv_batch = 1.0 / nb as f64;
    let mut grads = Gradients::zeros_like(params);

    // heads
    let dlogits: Vec<f64> = per_sample.iter().flat_map(|s| s.dlogits.iter().map(|g| g * inv_batch)).collect();
    let dvalue_pre: Vec<f64> = per_sample
        .iter()
        .enumerate()
        .flat_map(|(b, s)| {
            let values = &pass.values[b * cfg.value_size..][..cfg.value_size];
            s.dvalues
                .iter()
                .zip(values)
                .map(|(g, v)| g * inv_batch * (1.0 - v * v))
                .collect::<Vec<_>>()
        })
        .collect();

    let ph = POLICY_HEAD_CHANNELS;
    let (gw, gb) = split_two(&mut grads, l.policy_fc_w, l.policy_fc_b);
    let mut dpolicy_act = dense_backward(&pass.policy_act, params.p(l.policy_fc_w), &dlogits, ph * area, cfg.policy_size, nb, gw, gb);
    relu_backward(&pass.policy_act, &mut dpolicy_act);
    let (gw, gb) = split_two(&mut grads, l.policy_conv_w, l.policy_conv_b);
    let mut dtrunk = pointwise_backward(&pass.trunk, params.p(l.policy_conv_w), &dpolicy_act, c, ph, &d, gw, gb);

    let vh = VALUE_HEAD_CHANNELS;
    let (gw, gb) = split_two(&mut grads, l.value_fc2_w, l.value_fc2_b);
    let mut dhidden = dense_backward(&pass.value_hidden, params.p(l.value_fc2_w), &dvalue_pre, cfg.value_hidden, cfg.value_size, nb, gw, gb);
    relu_backward(&pass.value_hidden, &mut dhidden);
    let (gw, gb) = split_two(&mut grads, l.value_fc1_w, l.value_fc1_b);
    let mut dvalue_act = dense_backward(&pass.value_act, params.p(l.value_fc1_w), &dhidden, vh * area, cfg.value_hidden, nb, gw, gb);
    relu_backward(&pass.value_act, &mut dvalue_act);
    let (gw, gb) = split_two(&mut grads, l.value_conv_w, l.value_conv_b);
    let dtrunk_v = pointwise_backward(&pass.trunk, params.p(l.value_conv_w), &dvalue_act, c, vh, &d, gw, gb);
    for (a, b) in dtrunk.iter_mut().zip(dtrunk_v) {
        *a += b;
    }

    // residual tower, last block first
    let mut dx = dtrunk;
    for (bi, cache) in l.blocks.iter().zip(&pass.blocks).rev() {
        let dy = dx;
        let mut dact2 = conv3x3_backward(&cache.act2, params.p(bi.conv2), &dy, c, c, &d, &mut grads.tensors[bi.conv2], true)
            .expect("input gradient requested");
        relu_backward(&cache.act2, &mut dact2);
        let dconv1 = norm_backward(&dact2, &cache.norm2, params, bi.norm2, c, &d, &mut grads);
        let mut dact1 = conv3x3_backward(&cache.act1, params.p(bi.conv1), &dconv1, c, c, &d, &mut grads.tensors[bi.conv1], true)
            .expect("input gradient requested");
        relu_backward(&cache.act1, &mut dact1);
        let dgated = norm_backward(&dact1, &cache.norm1, params, bi.norm1, c, &d, &mut grads);

        // squeeze-and-excitation
        let mut dblock_in: Vec<f64> = dy;
        let mut dgate_pre = vec![0.0; nb * c];
        for (plane_idx, ((dg_plane, x_plane), &g)) in dgated
            .chunks(area)
            .zip(cache.x.chunks(area))
            .zip(&cache.gate)
            .enumerate()
        {
            let dgate: f64 = dg_plane.iter().zip(x_plane).map(|(a, b)| a * b).sum();
            dgate_pre[plane_idx] = dgate * g * (1.0 - g);
            let dst = &mut dblock_in[plane_idx * area..][..area];
            for (d, dg) in dst.iter_mut().zip(dg_plane) {
                *d += dg * g;
            }
        }
        let (gw, gb) = split_two(&mut grads, bi.se_expand_w, bi.se_expand_b);
        let mut dreduced = dense_backward(&cache.reduced, params.p(bi.se_expand_w), &dgate_pre, r, c, nb, gw, gb);
        relu_backward(&cache.reduced, &mut dreduced);
        let (gw, gb) = split_two(&mut grads, bi.se_reduce_w, bi.se_reduce_b);
        let dsqueezed = dense_backward(&cache.squeezed, params.p(bi.se_reduce_w), &dreduced, c, r, nb, gw, gb);
        for (plane_idx, ds) in dsqueezed.iter().enumerate() {
            let share = ds / area as f64;
            for v in &mut dblock_in[plane_idx * area..][..area] {
                *v += share;
            }
        }
        dx = dblock_in;
    }

    // stem
    let mut dstem = dx;
    relu_backward(&pass.stem_act, &mut dstem);
    let dconv = norm_backward(&dstem, &pass.stem_norm, params, l.stem_norm, c, &d, &mut grads);
    conv3x3_backward(&pass.input, params.p(l.stem_conv), &dconv, cfg.input_planes, c, &d, &mut grads.tensors[l.stem_conv], false);

    if l2 != 0.0 {
        for (g, t) in grads.tensors.iter_mut().zip(&params.tensors) {
            if t.kind.is_decayed() {
                for (g, &w) in g.iter_mut().zip(&t.data) {
                    *g += 2.0 * l2 * f64::from(w);
                }
            }
        }
    }

    Ok(Backward {
        loss,
        gradients: grads,
        norm_stats: BatchNormStats {
            layers: pass.norm_stats,
        },
    })
}

fn split_two(grads: &mut Gradients, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b, "weight tensor precedes its bias");
    let (lo, hi) = grads.tensors.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// [`Evaluator`] backed by an immutable parameter snapshot.
#[derive(Debug, Clone)]
pub struct NetworkEvaluator {
    params: Arc<Parameters>,
}

impl NetworkEvaluator {
    pub fn new(params: Arc<Parameters>) -> Self {
        NetworkEvaluator { params }
    }

    pub fn params(&self) -> &Arc<Parameters> {
        &self.params
    }
}

impl Evaluator for NetworkEvaluator {
    fn evaluate(&self, tensor: &StateTensor) -> Result<Evaluation, EvalError> {
        let out = forward(&self.params, std::slice::from_ref(tensor))
            .map_err(|e| EvalError(e.to_string()))?
            .pop()
            .expect("one output per input");
        Ok(Evaluation {
            policy_logits: out.policy_logits,
            value: out.value,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{GameDescriptor, Move};
    use crate::util::seeded_rng;

    fn ttm() -> GameDescriptor {
        GameDescriptor::TIC_TAC_MO
    }

    fn states(n: usize, seed: u64) -> Vec<StateTensor> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| {
                let mut s = ttm().initial_state();
                let k = rng.random_range(0..6);
                for _ in 0..k {
                    let m = s.legal_moves();
                    s = s.apply_move(m[rng.random_range(0..m.len())]).unwrap();
                }
                s.encode()
            })
            .collect()
    }

    #[test]
    fn output_sizes_match_the_game() {
        let params = init_parameters(NetworkConfig::tiny(&ttm()), &mut seeded_rng(1));
        let out = forward(&params, &states(2, 0)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].policy_logits.len(), 15);
        assert_eq!(out[0].value.len(), 3);

        let c = GameDescriptor::CONNECT_3X3;
        let params = init_parameters(NetworkConfig::tiny(&c), &mut seeded_rng(1));
        let out = forward(&params, &[c.initial_state().encode()]).unwrap();
        assert_eq!((out[0].policy_logits.len(), out[0].value.len()), (7, 3));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let params = Parameters::zeros(NetworkConfig::desk(&ttm()));
        for out in forward(&params, &states(3, 2)).unwrap() {
            assert!(out.policy_logits.iter().all(|&v| v == 0.0));
            assert!(out.value.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let params = init_parameters(NetworkConfig::desk(&ttm()), &mut seeded_rng(4));
        let batch = states(4, 3);
        let a = forward(&params, &batch).unwrap();
        let b = forward(&params, &batch).unwrap();
        assert_eq!(a, b);
        for out in &a {
            assert!(out.value.as_slice().iter().all(|v| v.abs() < 1.0));
            assert!(out.policy_logits.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn saturated_value_stays_inside_unit_interval() {
        let mut params = Parameters::zeros(NetworkConfig::tiny(&ttm()));
        let bias = params.layout.value_fc2_b;
        params.tensors[bias].data = vec![50.0, -50.0, 0.0];
        let out = forward(&params, &states(1, 0)).unwrap();
        assert!(out[0].value[0] < 1.0 && out[0].value[1] > -1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let params = init_parameters(NetworkConfig::tiny(&ttm()), &mut seeded_rng(1));
        let wrong = GameDescriptor::CONNECT_3X3.initial_state().encode();
        assert!(matches!(
            forward(&params, &[wrong]),
            Err(NetworkError::ShapeMismatch { .. })
        ));
        assert!(matches!(forward(&params, &[]), Err(NetworkError::EmptyBatch)));
    }

    #[test]
    fn worked_loss_example() {
        let params = Parameters::zeros(NetworkConfig::tiny(&ttm()));
        let output = NetworkOutput {
            policy_logits: vec![0.0; 15],
            value: ScoreVector::zeros(3),
        };
        let pi = MoveDistribution::new(vec![(Move(3), 0.5), (Move(8), 0.5)]);
        let z = ScoreVector::win(3, 0);
        let terms = loss(&output, &pi, &z, &params, 1e-4);
        assert!((terms.value_mse - 1.0).abs() < 1e-12);
        assert!((terms.policy_ce - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(terms.l2_penalty, 0.0);
        assert!((terms.total - 1.693_147_180_559_945).abs() < 1e-6);
    }

    #[test]
    fn two_player_loss_is_the_scalar_loss_averaged() {
        let params = Parameters::zeros(NetworkConfig::tiny(&GameDescriptor::TIC_TAC_TOE));
        let v = 0.3f32;
        let output = NetworkOutput {
            policy_logits: vec![0.0; 9],
            value: ScoreVector::from_slice(&[v, -v]),
        };
        let pi = MoveDistribution::new(vec![(Move(4), 1.0)]);
        let terms = loss(&output, &pi, &ScoreVector::win(2, 0), &params, 0.0);
        // (1/2) * ((1 - v)^2 + (-1 + v)^2) = (z - v)^2 with z = 1
        let scalar = (1.0 - f64::from(v)).powi(2);
        assert!((terms.value_mse - scalar).abs() < 1e-12);
        assert_eq!(terms.policy_ce, 0.0);
    }

    #[test]
    fn l2_skips_norm_and_bias() {
        let mut params = Parameters::zeros(NetworkConfig::tiny(&ttm()));
        for t in params.tensors_mut() {
            t.data.fill(1.0);
        }
        let weights: usize = params
            .tensors()
            .iter()
            .filter(|t| t.kind == ParamKind::Weight)
            .map(|t| t.data.len())
            .sum();
        assert!((params.l2_penalty(0.5) - 0.5 * weights as f64).abs() < 1e-9);
    }

    #[test]
    fn init_is_seeded() {
        let a = init_parameters(NetworkConfig::tiny(&ttm()), &mut seeded_rng(9));
        let b = init_parameters(NetworkConfig::tiny(&ttm()), &mut seeded_rng(9));
        let c = init_parameters(NetworkConfig::tiny(&ttm()), &mut seeded_rng(10));
        assert_eq!(a.tensors(), b.tensors());
        assert_ne!(a.tensors(), c.tensors());
        let scale = a.tensor("stem.norm.scale").unwrap();
        assert!(scale.data.iter().all(|&v| v == 1.0));
        assert!(a.tensor("block0.se.reduce.bias").unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_the_mean_gradient() {
        let params = init_parameters(NetworkConfig::tiny(&ttm()), &mut seeded_rng(2));
        let batch = states(3, 5);
        let targets: Vec<Target> = (0..3)
            .map(|i| {
                let mut pi = vec![0.0; 15];
                pi[i] = 0.75;
                pi[i + 4] = 0.25;
                Target {
                    pi,
                    z: ScoreVector::win(3, i),
                }
            })
            .collect();
        let single = backward(&params, &batch, &targets, 1e-4).unwrap();
        let doubled_batch: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        let doubled_targets: Vec<_> = targets.iter().chain(&targets).cloned().collect();
        let doubled = backward(&params, &doubled_batch, &doubled_targets, 1e-4).unwrap();
        assert!((single.loss.total - doubled.loss.total).abs() < 1e-12);
        for (a, b) in single.gradients.tensors.iter().flatten().zip(doubled.gradients.tensors.iter().flatten()) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn zero_loss_batch_has_zero_gradient() {
        // a zero network predicts v = 0 and a uniform policy; make those the targets
        let params = Parameters::zeros(NetworkConfig::tiny(&ttm()));
        let batch = states(4, 8);
        let targets: Vec<Target> = (0..4)
            .map(|_| Target {
                pi: vec![0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                z: ScoreVector::zeros(3),
            })
            .collect();
        let out = backward(&params, &batch, &targets, 0.0).unwrap();
        assert!(out.gradients.norm() < 1e-8);
        assert!((out.loss.policy_ce - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let params = init_parameters(NetworkConfig::tiny(&ttm()), &mut seeded_rng(3));
        params.save(dir.path()).unwrap();
        let back = Parameters::load(dir.path()).unwrap();
        assert_eq!(back.config(), params.config());
        let batch = states(3, 1);
        assert_eq!(forward(&params, &batch).unwrap(), forward(&back, &batch).unwrap());

        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("network.json")).unwrap()).unwrap();
        assert_eq!(manifest["arrays"][0]["name"], "stem.conv.weight");
        assert_eq!(manifest["arrays"][0]["dtype"], "f32");
        assert_eq!(manifest["meta"]["config"]["channels"], 4);
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let mut params = init_parameters(NetworkConfig::tiny(&ttm()), &mut seeded_rng(3));
        let batch = states(4, 2);
        let targets = vec![
            Target {
                pi: MoveDistribution::uniform(&[Move(0), Move(1)]).to_dense(15),
                z: ScoreVector::zeros(3)
            };
            4
        ];
        let out = backward(&params, &batch, &targets, 0.0).unwrap();
        let (idx, (mean, _)) = &out.norm_stats.layers[0];
        let expected = (0.1 * mean[0]) as f32;
        params.update_running_stats(&out.norm_stats);
        assert_eq!(params.tensors[idx.mean].data[0], expected);
    }
}
