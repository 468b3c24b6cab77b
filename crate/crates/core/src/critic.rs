//! ReLU multilayer perceptron approximating `Q(s, u)`, with hand-written
//! backpropagation, first-order optimizers and target-network soft updates.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, Dyn, ViewStorage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::FeatureState;
use crate::error::{Error, Result};

/// Four state features plus the action.
pub const INPUT_WIDTH: usize = 5;

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

pub fn critic_input(s: &FeatureState, u: f64) -> [f64; INPUT_WIDTH] {
    [s.e_y, s.i_y, s.d, s.i_u, u]
}

/// Fully connected network, ReLU on hidden layers and identity on the scalar
/// output. Parameters are stored flat, layer by layer, each layer as its
/// row-major `out x in` weight matrix followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn layer_sizes(hidden: &[usize]) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(INPUT_WIDTH);
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    sizes
}

impl Mlp {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases.
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(hidden)?;
        let mut offset = 0;
        for w in net.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(hidden: &[usize]) -> Result<Self> {
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument("hidden layer widths must be at least 1".into()));
        }
        let sizes = layer_sizes(hidden);
        let params = vec![0.0; param_count(&sizes)];
        Ok(Self { sizes, params })
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes[0] != INPUT_WIDTH || *sizes.last().unwrap() != 1 || sizes.contains(&0) {
            return Err(Error::ShapeMismatch(format!("invalid layer sizes {sizes:?}")));
        }
        if params.len() != param_count(&sizes) {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters for {:?}, got {}",
                param_count(&sizes),
                sizes,
                params.len()
            )));
        }
        Ok(Self { sizes, params })
    }

    /// Widths from input to output, e.g. `[5, 64, 64, 1]`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Offset of layer `l`'s weights in the flat parameter vector.
    fn offset(&self, l: usize) -> usize {
        param_count(&self.sizes[..=l])
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            acts: self.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: self.sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Forward pass storing every layer's activations in `scratch`.
    pub fn forward_with(&self, x: &[f64; INPUT_WIDTH], scratch: &mut Scratch) -> f64 {
        scratch.acts[0].copy_from_slice(x);
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let (before, after) = scratch.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + dot(row, input);
                out[o] = if l == last { z } else { z.max(0.0) };
            }
        }
        scratch.acts[self.layers()][0]
    }

    pub fn forward(&self, x: &[f64; INPUT_WIDTH]) -> f64 {
        self.forward_with(x, &mut self.scratch())
    }

    /// Backpropagates `d_out = dL/dq` through the activations left by the
    /// last [`Mlp::forward_with`] call. Parameter gradients are added into
    /// `grads`; the gradient with respect to the input is left in
    /// `scratch.deltas[0]`.
    pub fn backward_with(&self, d_out: f64, scratch: &mut Scratch, grads: Option<&mut [f64]>) {
        let layers = self.layers();
        scratch.deltas[layers][0] = d_out;
        let mut grads = grads;
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let w = &self.params[off..off + n_in * n_out];
            let (d_lo, d_hi) = scratch.deltas.split_at_mut(l + 1);
            let delta = &d_hi[0];
            let d_in = &mut d_lo[l];
            let input = &scratch.acts[l];

            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        axpy(d, input, &mut gw[o * n_in..(o + 1) * n_in]);
                    }
                    gb[o] += d;
                }
            }

            d_in.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    axpy(d, &w[o * n_in..(o + 1) * n_in], d_in);
                }
            }
            if l > 0 {
                for (dv, &a) in d_in.iter_mut().zip(input.iter()) {
                    if a <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
        }
    }
}

type StridedView<'a> = nalgebra::Matrix<f64, Dyn, Dyn, ViewStorage<'a, f64, Dyn, Dyn, Dyn, Dyn>>;

impl Mlp {
    /// Layer `l`'s weights seen as the column-major `in x out` matrix `W^T`.
    fn weights_t(&self, l: usize) -> DMatrixView<'_, f64> {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let off = self.offset(l);
        DMatrixView::from_slice(&self.params[off..off + n_in * n_out], n_in, n_out)
    }

    /// Layer `l`'s weights as the `out x in` matrix `W`.
    fn weights(&self, l: usize) -> StridedView<'_> {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let off = self.offset(l);
        DMatrixView::from_slice_with_strides(&self.params[off..off + n_in * n_out], n_out, n_in, n_in, 1)
    }

    pub fn batch_scratch(&self, batch: usize) -> BatchScratch {
        BatchScratch {
            acts: self.sizes.iter().map(|&n| DMatrix::zeros(batch, n)).collect(),
            deltas: self.sizes.iter().map(|&n| DMatrix::zeros(batch, n)).collect(),
        }
    }

    /// Forward pass over every row of `bs`'s input matrix at once. Returns
    /// one output per row.
    pub fn forward_batch<'a>(&self, bs: &'a mut BatchScratch) -> &'a [f64] {
        let layers = self.layers();
        for l in 0..layers {
            let n_in = self.sizes[l];
            let n_out = self.sizes[l + 1];
            let off = self.offset(l) + n_in * n_out;
            let bias = &self.params[off..off + n_out];
            let (before, after) = bs.acts.split_at_mut(l + 1);
            let out = &mut after[0];
            out.gemm(1.0, &before[l], &self.weights_t(l), 0.0);
            let relu = l + 1 < layers;
            for (j, mut col) in out.column_iter_mut().enumerate() {
                let b = bias[j];
                for v in col.iter_mut() {
                    *v += b;
                    if relu && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        bs.acts[layers].as_slice()
    }

    /// Batched counterpart of [`Mlp::backward_with`]: `d_out[i]` is `dL/dq`
    /// for row `i` of the last [`Mlp::forward_batch`]. Parameter gradients
    /// are summed over rows into `grads`; per-row input gradients are left in
    /// [`BatchScratch::input_grads`].
    pub fn backward_batch(&self, d_out: &[f64], bs: &mut BatchScratch, grads: Option<&mut [f64]>) {
        let layers = self.layers();
        bs.deltas[layers].as_mut_slice().copy_from_slice(d_out);
        let mut grads = grads;
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let (d_lo, d_hi) = bs.deltas.split_at_mut(l + 1);
            let delta = &d_hi[0];
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                let mut gw = DMatrixViewMut::from_slice(gw, n_in, n_out);
                gw.gemm_tr(1.0, &bs.acts[l], delta, 1.0);
                for (j, col) in delta.column_iter().enumerate() {
                    gb[j] += col.sum();
                }
            }
            let d_in = &mut d_lo[l];
            d_in.gemm(1.0, delta, &self.weights(l), 0.0);
            if l > 0 {
                for (dv, &a) in d_in.iter_mut().zip(bs.acts[l].iter()) {
                    if a <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
        }
    }
}

/// Row-per-sample buffers for whole-minibatch passes.
#[derive(Debug, Clone)]
pub struct BatchScratch {
    acts: Vec<DMatrix<f64>>,
    deltas: Vec<DMatrix<f64>>,
}

impl BatchScratch {
    pub fn rows(&self) -> usize {
        self.acts[0].nrows()
    }

    /// Resizes every buffer to `rows` samples.
    pub fn set_rows(&mut self, rows: usize) {
        if rows != self.rows() {
            for m in self.acts.iter_mut().chain(self.deltas.iter_mut()) {
                let cols = m.ncols();
                *m = DMatrix::zeros(rows, cols);
            }
        }
    }

    pub fn set_input(&mut self, row: usize, x: &[f64; INPUT_WIDTH]) {
        for (j, &v) in x.iter().enumerate() {
            self.acts[0][(row, j)] = v;
        }
    }

    /// `dq/dx` for `row`, after [`Mlp::backward_batch`].
    pub fn input_grad(&self, row: usize, col: usize) -> f64 {
        self.deltas[0][(row, col)]
    }

    pub fn input_grads(&self) -> &DMatrix<f64> {
        &self.deltas[0]
    }
}

/// Reusable activation and delta buffers, one vector per layer.
#[derive(Debug, Clone)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    pub fn activations(&self, layer: usize) -> &[f64] {
        &self.acts[layer]
    }

    pub fn input_grad(&self) -> &[f64] {
        &self.deltas[0]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn q_forward(net: &Mlp, s: &FeatureState, u: f64) -> Result<f64> {
    let q = net.forward(&critic_input(s, u));
    if q.is_finite() {
        Ok(q)
    } else {
        Err(Error::NonFinite("critic output".into()))
    }
}

/// One regression sample `(s, u, target)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QSample {
    pub state: FeatureState,
    pub action: f64,
    pub target: f64,
}

/// Gradient of `0.5 * mean((Q(s, u) - target)^2)` with respect to every
/// parameter, together with that loss.
pub fn q_backward(net: &Mlp, batch: &[QSample]) -> Result<(Vec<f64>, f64)> {
    let mut grads = vec![0.0; net.num_params()];
    let loss = q_backward_into(net, batch, &mut grads, &mut net.scratch())?;
    Ok((grads, loss))
}

/// Allocation-free form of [`q_backward`]; `grads` is overwritten.
pub fn q_backward_into(net: &Mlp, batch: &[QSample], grads: &mut [f64], scratch: &mut Scratch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if grads.len() != net.num_params() {
        return Err(Error::ShapeMismatch("gradient buffer length".into()));
    }
    grads.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for sample in batch {
        let q = net.forward_with(&critic_input(&sample.state, sample.action), scratch);
        let err = q - sample.target;
        loss += 0.5 * err * err * scale;
        net.backward_with(err * scale, scratch, Some(grads));
    }
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("critic loss".into()))
    }
}

/// [`q_backward_into`] computed with whole-batch matrix products.
pub fn q_backward_batch(net: &Mlp, batch: &[QSample], grads: &mut [f64], bs: &mut BatchScratch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if grads.len() != net.num_params() {
        return Err(Error::ShapeMismatch("gradient buffer length".into()));
    }
    bs.set_rows(batch.len());
    for (i, sample) in batch.iter().enumerate() {
        bs.set_input(i, &critic_input(&sample.state, sample.action));
    }
    let scale = 1.0 / batch.len() as f64;
    let q = net.forward_batch(bs);
    let mut loss = 0.0;
    let d_out: Vec<f64> = q
        .iter()
        .zip(batch)
        .map(|(&q, sample)| {
            let err = q - sample.target;
            loss += 0.5 * err * err * scale;
            err * scale
        })
        .collect();
    grads.iter_mut().for_each(|g| *g = 0.0);
    net.backward_batch(&d_out, bs, Some(grads));
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("critic loss".into()))
    }
}

/// `dQ/du` at `(s, u)`.
pub fn grad_wrt_action(net: &Mlp, s: &FeatureState, u: f64) -> f64 {
    grad_wrt_action_with(net, s, u, &mut net.scratch())
}

pub fn grad_wrt_action_with(net: &Mlp, s: &FeatureState, u: f64, scratch: &mut Scratch) -> f64 {
    net.forward_with(&critic_input(s, u), scratch);
    net.backward_with(1.0, scratch, None);
    scratch.input_grad()[INPUT_WIDTH - 1]
}

/// `target <- tau * online + (1 - tau) * target`, element-wise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if target.sizes != online.sizes {
        return Err(Error::ShapeMismatch(format!(
            "soft update between {:?} and {:?}",
            target.sizes, online.sizes
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("soft update rate must be in [0, 1], got {tau}")));
    }
    if tau == 1.0 {
        target.params.copy_from_slice(&online.params);
    } else if tau > 0.0 {
        for (t, &o) in target.params.iter_mut().zip(&online.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Fixed-rate gradient step.
    Sgd,
    Adam,
    /// Heavy-ball momentum with a learning rate decaying as `lr / sqrt(n)`.
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Momentum decay for `sgd_momentum`.
    pub momentum: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.75,
            clip: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be nonnegative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip threshold must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer state for a flat parameter vector. [`Optimizer::step`] descends;
/// callers maximizing an objective pass the negated gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

/// Factor that brings `grads` down to global norm `max_norm` (1 if already below).
pub fn clip_scale(grads: &[f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        max_norm / norm
    } else {
        1.0
    }
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, num_params: usize) -> Result<Self> {
        cfg.validate()?;
        let second = if cfg.kind == OptimizerKind::Adam {
            vec![0.0; num_params]
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg,
            first: vec![0.0; num_params],
            second,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let scale = self.cfg.clip.map_or(1.0, |c| clip_scale(grads, c));
        self.steps += 1;
        let n = self.steps as f64;
        let lr = self.cfg.lr;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * scale * g;
                }
            }
            OptimizerKind::SgdMomentum => {
                let rate = lr / n.sqrt();
                for ((p, g), v) in params.iter_mut().zip(grads).zip(self.first.iter_mut()) {
                    *v = self.cfg.momentum * *v + scale * g;
                    *p -= rate * *v;
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powf(n);
                let c2 = 1.0 - ADAM_BETA2.powf(n);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    let g = scale * g;
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

const MAGIC: &[u8; 4] = b"PIDQ";
pub const FORMAT_VERSION: u32 = 1;

/// JSON form of a critic: version, layer widths and flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub version: u32,
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Mlp {
    /// Binary layout, little endian: `b"PIDQ"`, `u32` version, `u32` layer
    /// count, `u32` widths, `u64` parameter count, `f64` parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.sizes.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(Error::ShapeMismatch("truncated critic file".into()));
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err(Error::ShapeMismatch("not a critic file".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != FORMAT_VERSION {
            return Err(Error::ShapeMismatch(format!("unsupported critic format version {version}")));
        }
        let layers = u32_at(take(4)?) as usize;
        let mut sizes = Vec::with_capacity(layers);
        for _ in 0..layers {
            sizes.push(u32_at(take(4)?) as usize);
        }
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
        }
        if !cursor.is_empty() {
            return Err(Error::ShapeMismatch("trailing bytes in critic file".into()));
        }
        Self::from_params(sizes, params)
    }

    pub fn to_record(&self) -> MlpRecord {
        MlpRecord {
            version: FORMAT_VERSION,
            sizes: self.sizes.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_record(record: MlpRecord) -> Result<Self> {
        if record.version != FORMAT_VERSION {
            return Err(Error::ShapeMismatch(format!(
                "unsupported critic format version {}",
                record.version
            )));
        }
        Self::from_params(record.sizes, record.params)
    }
}
