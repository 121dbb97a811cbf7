//! Pooled feedforward network trained by least squares with Adam.
//!
//! Parameters live in one flat vector. Layer `l` with fan-in `a` and fan-out
//! `b` occupies `a * b` weights laid out input-major (`w[k * b + j]` connects
//! input `k` to unit `j`, i.e. `y = x W + bias`) followed by `b` biases. The
//! Adam moments share that layout, so a model carries everything needed to
//! resume training exactly where it stopped.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, FciError, Result};
use crate::panel::Panel;
use crate::rng::{child_seed, rng_from, stream_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>) -> Result<Self> {
        let arch = MlpArchitecture {
            input_dim,
            hidden_widths,
            activation: Activation::Relu,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(FciError::InvalidArgument("input_dim must be positive".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(FciError::InvalidArgument(
                "hidden_widths must be a non-empty list of positive widths".into(),
            ));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer including the scalar output layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_widths);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(a, b)| a * b + b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    HeUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_penalty: f64,
    pub seed: u64,
    pub init: InitScheme,
    /// Fit the network to `(y - mean) / sd` of the training targets and map
    /// predictions back. The shift and scale are frozen at the initial fit.
    pub standardize_targets: bool,
}

impl Default for TrainConfig {
    /// Empirical tuning defaults: Adam at 1e-3, 100 epochs, batches of 10 000.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 10_000,
            l2_penalty: 1e-5,
            seed: 0,
            init: InitScheme::HeUniform,
            standardize_targets: true,
        }
    }
}

impl TrainConfig {
    /// Monte Carlo settings: learning rate 0.01 over 500 epochs.
    pub fn simulation() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 500,
            l2_penalty: 0.0,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(FciError::InvalidArgument(
                "learning_rate must be finite and positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(FciError::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.l2_penalty.is_finite() && self.l2_penalty >= 0.0) {
            return Err(FciError::InvalidArgument("l2_penalty must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    /// In-sample MSE after the last epoch.
    pub final_mse: f64,
    /// Mean squared error over the mini-batches of each epoch.
    pub loss_history: Vec<f64>,
}

/// Affine map between network output and return units: `y = center + scale * out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub center: f64,
    pub scale: f64,
}

impl Default for TargetScaling {
    fn default() -> Self {
        TargetScaling {
            center: 0.0,
            scale: 1.0,
        }
    }
}

impl TargetScaling {
    fn from_targets(targets: &[f64]) -> Self {
        let n = targets.len() as f64;
        let center = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|y| (y - center) * (y - center)).sum::<f64>() / n;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        TargetScaling { center, scale }
    }

    fn forward(&self, y: f64) -> f64 {
        (y - self.center) / self.scale
    }

    fn inverse(&self, out: f64) -> f64 {
        self.center + self.scale * out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    architecture: MlpArchitecture,
    layout: Layout,
    params: Vec<f64>,
    adam: AdamState,
    meta: TrainingMeta,
    seed: u64,
    target: TargetScaling,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    layers: Vec<Slot>,
    n_params: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

impl Layout {
    fn new(arch: &MlpArchitecture) -> Self {
        let mut offset = 0;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let slot = Slot {
                    fan_in,
                    fan_out,
                    w: offset,
                    b: offset + fan_in * fan_out,
                };
                offset += fan_in * fan_out + fan_out;
                slot
            })
            .collect();
        Layout {
            layers,
            n_params: offset,
        }
    }

    fn is_weight(&self, index: usize) -> bool {
        self.layers
            .iter()
            .any(|s| index >= s.w && index < s.b)
    }
}

/// Per-sample forward pass, kept separate from the batched engine so the
/// finite-difference check does not share code with the gradient it checks.
struct Scratch {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(layout: &Layout) -> Self {
        let widths: Vec<usize> = layout.layers.iter().map(|s| s.fan_out).collect();
        Scratch {
            pre: widths.iter().map(|&w| vec![0.0; w]).collect(),
            act: widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    fn forward(&mut self, layout: &Layout, params: &[f64], x: &[f64]) -> f64 {
        let last = layout.layers.len() - 1;
        for (l, s) in layout.layers.iter().enumerate() {
            let input: &[f64] = if l == 0 { x } else { &self.act[l - 1] };
            let out = &mut self.pre[l];
            out.copy_from_slice(&params[s.b..s.b + s.fan_out]);
            for (k, &xk) in input.iter().enumerate() {
                let row = &params[s.w + k * s.fan_out..s.w + (k + 1) * s.fan_out];
                for (o, &wkj) in out.iter_mut().zip(row) {
                    *o += xk * wkj;
                }
            }
            let act = &mut self.act[l];
            if l == last {
                act.copy_from_slice(out);
            } else {
                for (a, &z) in act.iter_mut().zip(out.iter()) {
                    *a = z.max(0.0);
                }
            }
        }
        self.act[last][0]
    }

    /// ReLU on/off pattern of the last forward pass.
    fn pattern(&self, out: &mut Vec<bool>) {
        let last = self.pre.len() - 1;
        for layer in &self.pre[..last] {
            out.extend(layer.iter().map(|&z| z > 0.0));
        }
    }
}

/// Rows per cache block in the batched kernels.
const BLOCK: usize = 256;

/// Lane-split dot product with a fixed summation order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    for x in &mut ca {
        for l in 0..8 {
            acc[l] += x[l];
        }
    }
    let tail: f64 = ca.remainder().iter().sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Batched forward/backward buffers in feature-major layout: unit `j` of a
/// layer holds its activations over the batch at `[j * cap, j * cap + rows)`.
/// Each output is accumulated over inputs in a fixed order, so a sample's
/// prediction does not depend on which batch it sits in.
struct Engine {
    input: Vec<f64>,
    act: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    cap: usize,
}

impl Engine {
    fn new(layout: &Layout, cap: usize) -> Self {
        let widths: Vec<usize> = layout.layers.iter().map(|s| s.fan_out).collect();
        Engine {
            input: vec![0.0; layout.layers[0].fan_in * cap],
            act: widths.iter().map(|&w| vec![0.0; w * cap]).collect(),
            delta: widths.iter().map(|&w| vec![0.0; w * cap]).collect(),
            cap,
        }
    }

    /// Load consecutive row-major samples.
    fn load_rows(&mut self, x: &[f64], d: usize) -> usize {
        let rows = x.len() / d;
        debug_assert!(rows <= self.cap);
        for (r, row) in x.chunks_exact(d).enumerate() {
            for (k, v) in row.iter().enumerate() {
                self.input[k * self.cap + r] = *v;
            }
        }
        rows
    }

    /// Load the samples `idx` from a feature-major matrix (`ft[k * n + o]`).
    fn load_gather(&mut self, ft: &[f64], n: usize, idx: &[usize]) {
        debug_assert!(idx.len() <= self.cap);
        let d = ft.len() / n;
        for k in 0..d {
            let col = &ft[k * n..(k + 1) * n];
            let dst = &mut self.input[k * self.cap..k * self.cap + idx.len()];
            for (v, &o) in dst.iter_mut().zip(idx) {
                *v = col[o];
            }
        }
    }

    /// Network outputs for the first `rows` loaded samples.
    fn forward(&mut self, layout: &Layout, params: &[f64], rows: usize) -> &[f64] {
        let cap = self.cap;
        let last = layout.layers.len() - 1;
        for start in (0..rows).step_by(BLOCK) {
            let end = (start + BLOCK).min(rows);
            for (l, s) in layout.layers.iter().enumerate() {
                let (done, rest) = self.act.split_at_mut(l);
                let input: &[f64] = if l == 0 { &self.input } else { &done[l - 1] };
                let out = &mut rest[0];
                for j in 0..s.fan_out {
                    let z = &mut out[j * cap + start..j * cap + end];
                    z.fill(params[s.b + j]);
                    for k in 0..s.fan_in {
                        let w = params[s.w + k * s.fan_out + j];
                        let a = &input[k * cap + start..k * cap + end];
                        for (zi, ai) in z.iter_mut().zip(a) {
                            *zi += w * ai;
                        }
                    }
                    if l != last {
                        for zi in z.iter_mut() {
                            *zi = zi.max(0.0);
                        }
                    }
                }
            }
        }
        &self.act[last][..rows]
    }

    /// Accumulate into `grad` the gradient of `Σ_r dout_r · out_r`, with
    /// `dout` already stored in the output delta; `forward` must have run on
    /// the same samples.
    fn backward(&mut self, layout: &Layout, params: &[f64], rows: usize, grad: &mut [f64]) {
        let cap = self.cap;
        let last = layout.layers.len() - 1;
        for start in (0..rows).step_by(BLOCK) {
            let end = (start + BLOCK).min(rows);
            for l in (0..=last).rev() {
                let s = layout.layers[l];
                let input: &[f64] = if l == 0 { &self.input } else { &self.act[l - 1] };
                let (lower, upper) = self.delta.split_at_mut(l);
                let delta = &upper[0];
                for j in 0..s.fan_out {
                    let dj = &delta[j * cap + start..j * cap + end];
                    grad[s.b + j] += sum(dj);
                    for k in 0..s.fan_in {
                        grad[s.w + k * s.fan_out + j] += dot(&input[k * cap + start..k * cap + end], dj);
                    }
                }
                if l > 0 {
                    let prev = &mut lower[l - 1];
                    for k in 0..s.fan_in {
                        let p = &mut prev[k * cap + start..k * cap + end];
                        p.fill(0.0);
                        for j in 0..s.fan_out {
                            let w = params[s.w + k * s.fan_out + j];
                            let dj = &delta[j * cap + start..j * cap + end];
                            for (pi, di) in p.iter_mut().zip(dj) {
                                *pi += w * di;
                            }
                        }
                        let a = &input[k * cap + start..k * cap + end];
                        for (pi, ai) in p.iter_mut().zip(a) {
                            if *ai <= 0.0 {
                                *pi = 0.0;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Squared-error sum over the loaded batch against `y`; accumulates the
    /// gradient of the batch mean squared error into `grad`.
    fn mse_grad(&mut self, layout: &Layout, params: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        let rows = y.len();
        self.forward(layout, params, rows);
        let last = layout.layers.len() - 1;
        let inv = 2.0 / rows as f64;
        let mut sse = 0.0;
        for ((d, out), target) in self.delta[last].iter_mut().zip(&self.act[last]).zip(y) {
            let r = out - target;
            sse += r * r;
            *d = r * inv;
        }
        self.backward(layout, params, rows, grad);
        sse
    }
}

const PREDICT_CHUNK: usize = 4096;

impl MlpModel {
    /// Freshly initialised network: He-uniform weights scaled by fan-in, zero biases.
    pub fn init(arch: &MlpArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(arch);
        let mut params = vec![0.0; layout.n_params];
        let mut rng = rng_from(stream_seed(seed, Stream::Init));
        for s in &layout.layers {
            let limit = (6.0 / s.fan_in as f64).sqrt();
            for w in &mut params[s.w..s.b] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(MlpModel {
            architecture: arch.clone(),
            adam: AdamState::new(layout.n_params),
            layout,
            params,
            meta: TrainingMeta::default(),
            seed,
            target: TargetScaling::default(),
        })
    }

    /// Network with explicit parameters in the flat layout described above.
    pub fn from_params(arch: &MlpArchitecture, params: Vec<f64>) -> Result<Self> {
        let mut model = MlpModel::init(arch, 0)?;
        if params.len() != model.params.len() {
            return Err(FciError::DimensionMismatch {
                context: "model parameters",
                expected: model.params.len(),
                actual: params.len(),
            });
        }
        ensure_finite(&params, "model parameters")?;
        model.params = params;
        Ok(model)
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.architecture
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn target_scaling(&self) -> TargetScaling {
        self.target
    }

    /// Whether flat parameter `index` is a weight (as opposed to a bias).
    pub fn is_weight(&self, index: usize) -> bool {
        self.layout.is_weight(index)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.architecture.input_dim {
            return Err(FciError::DimensionMismatch {
                context: "feature dimension",
                expected: self.architecture.input_dim,
                actual: dim,
            });
        }
        Ok(())
    }

    /// Forecast for each row of a row-major `n x input_dim` feature matrix.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        let d = self.architecture.input_dim;
        if features.len() % d != 0 {
            return Err(FciError::DimensionMismatch {
                context: "feature matrix width",
                expected: d,
                actual: features.len() % d,
            });
        }
        ensure_finite(features, "prediction features")?;
        Ok(self.predict_unchecked(features))
    }

    fn predict_unchecked(&self, features: &[f64]) -> Vec<f64> {
        let d = self.architecture.input_dim;
        let n = features.len() / d;
        let mut engine = Engine::new(&self.layout, n.min(PREDICT_CHUNK));
        let mut out = Vec::with_capacity(n);
        for x in features.chunks(PREDICT_CHUNK * d) {
            let rows = engine.load_rows(x, d);
            let g = engine.forward(&self.layout, &self.params, rows);
            out.extend(g.iter().map(|&v| self.target.inverse(v)));
        }
        out
    }

    /// Fitted values on every observation of a panel.
    pub fn fitted(&self, panel: &Panel) -> Result<Vec<f64>> {
        self.check_dim(panel.dim())?;
        Ok(self.predict_unchecked(panel.features()))
    }

    pub fn in_sample_mse(&self, panel: &Panel) -> Result<f64> {
        let fitted = self.fitted(panel)?;
        Ok(mse(&fitted, panel.targets()))
    }

    /// Penalised mini-batch loss `mean (y - g(x))^2 + l2 * |W|^2` and its gradient,
    /// measured in the network's own output units (targets pass through the
    /// model's target scaling first).
    ///
    /// `features` is row-major with `targets.len()` rows. Biases are not penalised.
    pub fn loss_gradient(&self, features: &[f64], targets: &[f64], l2: f64) -> Result<(f64, Vec<f64>)> {
        let d = self.architecture.input_dim;
        if targets.is_empty() {
            return Err(FciError::Empty("gradient batch"));
        }
        if features.len() != targets.len() * d {
            return Err(FciError::DimensionMismatch {
                context: "gradient batch features",
                expected: targets.len() * d,
                actual: features.len(),
            });
        }
        let mut grad = vec![0.0; self.layout.n_params];
        let mut engine = Engine::new(&self.layout, targets.len());
        let y: Vec<f64> = targets.iter().map(|&v| self.target.forward(v)).collect();
        engine.load_rows(features, d);
        let sse = engine.mse_grad(&self.layout, &self.params, &y, &mut grad);
        let inv = 1.0 / targets.len() as f64;
        let mut penalty = 0.0;
        for s in &self.layout.layers {
            for i in s.w..s.b {
                penalty += self.params[i] * self.params[i];
                grad[i] += 2.0 * l2 * self.params[i];
            }
        }
        Ok((sse * inv + l2 * penalty, grad))
    }

    fn run_epochs(&mut self, panel: &Panel, epochs: usize, cfg: &TrainConfig) {
        let n = panel.n_obs();
        let d = panel.dim();
        let batch = cfg.batch_size.min(n);
        let features = panel.features();
        let mut ft = vec![0.0; n * d];
        for (o, row) in features.chunks_exact(d).enumerate() {
            for (k, v) in row.iter().enumerate() {
                ft[k * n + o] = *v;
            }
        }
        let targets: Vec<f64> = panel.targets().iter().map(|&y| self.target.forward(y)).collect();
        let shuffle_root = stream_seed(cfg.seed, Stream::Shuffle);
        let mut order: Vec<usize> = (0..n).collect();
        let mut grad = vec![0.0; self.layout.n_params];
        let mut engine = Engine::new(&self.layout, batch);
        let mut yb = vec![0.0; batch];

        for _ in 0..epochs {
            let epoch = self.meta.epochs_run as u64;
            let mut rng = rng_from(child_seed(shuffle_root, epoch));
            // the permutation depends only on (seed, epoch index), not on history
            for (i, o) in order.iter_mut().enumerate() {
                *o = i;
            }
            order.shuffle(&mut rng);

            let mut sse = 0.0;
            for chunk in order.chunks(batch) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                engine.load_gather(&ft, n, chunk);
                for (y, &o) in yb.iter_mut().zip(chunk) {
                    *y = targets[o];
                }
                sse += engine.mse_grad(&self.layout, &self.params, &yb[..chunk.len()], &mut grad);
                if cfg.l2_penalty > 0.0 {
                    for s in &self.layout.layers {
                        for i in s.w..s.b {
                            grad[i] += 2.0 * cfg.l2_penalty * self.params[i];
                        }
                    }
                }
                self.adam_step(&grad, cfg.learning_rate);
            }
            self.meta.loss_history.push(sse / n as f64);
            self.meta.epochs_run += 1;
        }
    }

    fn adam_step(&mut self, grad: &[f64], lr: f64) {
        let a = &mut self.adam;
        a.step += 1;
        let t = a.step as i32;
        let c1 = 1.0 - a.beta1.powi(t);
        let c2 = 1.0 - a.beta2.powi(t);
        let (b1, b2, eps) = (a.beta1, a.beta2, a.epsilon);
        for (((p, m), v), &g) in self
            .params
            .iter_mut()
            .zip(a.m.iter_mut())
            .zip(a.v.iter_mut())
            .zip(grad)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }

    /// Serialisable snapshot of the model.
    pub fn to_document(&self) -> ModelDocument {
        let layers = self
            .layout
            .layers
            .iter()
            .map(|s| LayerDocument {
                fan_in: s.fan_in,
                fan_out: s.fan_out,
                weights: self.params[s.w..s.b].to_vec(),
                biases: self.params[s.b..s.b + s.fan_out].to_vec(),
            })
            .collect();
        ModelDocument {
            architecture: self.architecture.clone(),
            layers,
            optimizer: self.adam.clone(),
            seed: self.seed,
            target_scaling: self.target,
            meta: self.meta.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        let mut model = MlpModel::init(&doc.architecture, doc.seed)?;
        if doc.layers.len() != model.layout.layers.len() {
            return Err(FciError::DimensionMismatch {
                context: "model layers",
                expected: model.layout.layers.len(),
                actual: doc.layers.len(),
            });
        }
        for (s, layer) in model.layout.layers.clone().iter().zip(&doc.layers) {
            if layer.fan_in != s.fan_in
                || layer.fan_out != s.fan_out
                || layer.weights.len() != s.fan_in * s.fan_out
                || layer.biases.len() != s.fan_out
            {
                return Err(FciError::InvalidArgument(
                    "layer shapes inconsistent with architecture".into(),
                ));
            }
            model.params[s.w..s.b].copy_from_slice(&layer.weights);
            model.params[s.b..s.b + s.fan_out].copy_from_slice(&layer.biases);
        }
        let n = model.layout.n_params;
        if doc.optimizer.m.len() != n || doc.optimizer.v.len() != n {
            return Err(FciError::DimensionMismatch {
                context: "optimizer state",
                expected: n,
                actual: doc.optimizer.m.len(),
            });
        }
        ensure_finite(&model.params, "model parameters")?;
        model.adam = doc.optimizer;
        model.meta = doc.meta;
        model.target = doc.target_scaling;
        Ok(model)
    }
}

fn mse(fitted: &[f64], targets: &[f64]) -> f64 {
    fitted
        .iter()
        .zip(targets)
        .map(|(f, y)| (y - f) * (y - f))
        .sum::<f64>()
        / targets.len() as f64
}

/// JSON form of a model. Weights are row-major `fan_in x fan_out`; the Adam
/// moments follow the flat parameter order (per layer: weights, then biases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub architecture: MlpArchitecture,
    pub layers: Vec<LayerDocument>,
    pub optimizer: AdamState,
    pub seed: u64,
    #[serde(default)]
    pub target_scaling: TargetScaling,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDocument {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

fn check_panel(panel: &Panel, arch: &MlpArchitecture) -> Result<()> {
    if panel.n_obs() == 0 {
        return Err(FciError::Empty("training panel"));
    }
    if panel.dim() != arch.input_dim {
        return Err(FciError::DimensionMismatch {
            context: "feature dimension",
            expected: arch.input_dim,
            actual: panel.dim(),
        });
    }
    ensure_finite(panel.features(), "training features")?;
    ensure_finite(panel.targets(), "training targets")
}

/// Fit the network by Adam on the pooled least-squares loss.
pub fn train(panel: &Panel, arch: &MlpArchitecture, cfg: &TrainConfig) -> Result<MlpModel> {
    arch.validate()?;
    cfg.validate()?;
    check_panel(panel, arch)?;
    let mut model = MlpModel::init(arch, cfg.seed)?;
    if cfg.standardize_targets {
        model.target = TargetScaling::from_targets(panel.targets());
    }
    model.run_epochs(panel, cfg.epochs, cfg);
    model.meta.final_mse = model.in_sample_mse(panel)?;
    Ok(model)
}

/// Warm start: `k` further epochs from the model's parameters and Adam state.
pub fn continue_training(model: &MlpModel, panel: &Panel, k: usize, cfg: &TrainConfig) -> Result<MlpModel> {
    cfg.validate()?;
    check_panel(panel, &model.architecture)?;
    let mut next = model.clone();
    if k > 0 {
        next.run_epochs(panel, k, cfg);
        next.meta.final_mse = next.in_sample_mse(panel)?;
    }
    Ok(next)
}

/// Free-function form of [`MlpModel::predict`].
pub fn predict(model: &MlpModel, features: &[f64]) -> Result<Vec<f64>> {
    model.predict(features)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation flipped a ReLU.
    pub skipped_at_kink: usize,
}

/// Compare the backprop gradient of the penalised MSE with central finite
/// differences (step `1e-5`) on up to `max_params` randomly chosen coordinates.
///
/// The relative error of a coordinate is `|g - fd| / max(|g|, |fd|, 1e-6)`.
/// Coordinates whose perturbation changes any ReLU on/off state are skipped,
/// since the loss is not differentiable there.
pub fn gradient_check(
    model: &MlpModel,
    features: &[f64],
    targets: &[f64],
    l2: f64,
    max_params: usize,
    seed: u64,
) -> Result<GradientCheck> {
    const STEP: f64 = 1e-5;
    let (_, grad) = model.loss_gradient(features, targets, l2)?;
    let n = grad.len();
    let mut coords: Vec<usize> = (0..n).collect();
    coords.shuffle(&mut rng_from(seed));
    coords.truncate(max_params.min(n));
    coords.sort_unstable();

    let d = model.architecture.input_dim;
    let eval = |params: &[f64]| -> (f64, Vec<bool>) {
        let mut scratch = Scratch::new(&model.layout);
        let mut pattern = Vec::new();
        let mut sse = 0.0;
        for (x, &y) in features.chunks_exact(d).zip(targets) {
            let r = scratch.forward(&model.layout, params, x) - model.target.forward(y);
            sse += r * r;
            scratch.pattern(&mut pattern);
        }
        let penalty: f64 = model
            .layout
            .layers
            .iter()
            .flat_map(|s| params[s.w..s.b].iter())
            .map(|w| w * w)
            .sum();
        (sse / targets.len() as f64 + l2 * penalty, pattern)
    };

    let mut out = GradientCheck {
        max_relative_error: 0.0,
        checked: 0,
        skipped_at_kink: 0,
    };
    let mut params = model.params.clone();
    for &c in &coords {
        let orig = params[c];
        params[c] = orig + STEP;
        let (up, pat_up) = eval(&params);
        params[c] = orig - STEP;
        let (down, pat_down) = eval(&params);
        params[c] = orig;
        if pat_up != pat_down {
            out.skipped_at_kink += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * STEP);
        let denom = grad[c].abs().max(fd.abs()).max(1e-6);
        out.max_relative_error = out.max_relative_error.max((grad[c] - fd).abs() / denom);
        out.checked += 1;
    }
    Ok(out)
}
