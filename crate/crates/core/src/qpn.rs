//! QoE predicting network (QPN).
//!
//! A fixed 7 → 8 → 16 → 8 → 1 fully connected network with rectified-linear
//! hidden layers and a linear output. Parameters are stored in fixed-size
//! arrays so forward and backward passes compile to straight-line loops.
//!
//! The canonical flat layout, used by [`QpnParams::flatten`], by
//! [`gradient`] and by the parameter file format, is layer by layer: the
//! weight matrix in row-major `(out, in)` order followed by the bias vector.

use rand::Rng;

use crate::error::{Error, Result};

/// Width of the context vector fed to the network.
pub const INPUT_DIM: usize = 7;
/// Hidden layer widths.
pub const HIDDEN_WIDTHS: [usize; 3] = [H1, H2, H3];
/// Layer dimensions from input to output.
pub const LAYER_DIMS: [usize; 5] = [INPUT_DIM, H1, H2, H3, 1];
/// Total number of trainable parameters.
pub const PARAM_COUNT: usize =
    (INPUT_DIM + 1) * H1 + (H1 + 1) * H2 + (H2 + 1) * H3 + (H3 + 1);

const H1: usize = 8;
const H2: usize = 16;
const H3: usize = 8;

/// A validated 7-feature context vector with every entry in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Context([f64; INPUT_DIM]);

impl Context {
    pub fn new(features: [f64; INPUT_DIM]) -> Result<Self> {
        for (index, &value) in features.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite("context"));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::FeatureOutOfRange { index, value });
            }
        }
        Ok(Self(features))
    }

    pub fn from_slice(features: &[f64]) -> Result<Self> {
        let arr: [f64; INPUT_DIM] = features.try_into().map_err(|_| Error::DimensionMismatch {
            expected: INPUT_DIM,
            got: features.len(),
        })?;
        Self::new(arr)
    }

    pub fn features(&self) -> &[f64; INPUT_DIM] {
        &self.0
    }
}

/// A (context, observed QoE) training pair.
pub type Sample = (Context, f64);

/// One dense layer mapping `I` inputs to `O` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<const I: usize, const O: usize> {
    /// `weights[o][i]` connects input `i` to output `o`.
    pub weights: [[f64; I]; O],
    pub biases: [f64; O],
}

impl<const I: usize, const O: usize> Dense<I, O> {
    fn zeros() -> Self {
        Self {
            weights: [[0.0; I]; O],
            biases: [0.0; O],
        }
    }

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let bound = 1.0 / (I as f64).sqrt();
        let mut layer = Self::zeros();
        for row in layer.weights.iter_mut() {
            for w in row.iter_mut() {
                *w = rng.random_range(-bound..=bound);
            }
        }
        for b in layer.biases.iter_mut() {
            *b = rng.random_range(-bound..=bound);
        }
        layer
    }

    #[inline(always)]
    fn affine(&self, input: &[f64; I]) -> [f64; O] {
        let mut out = self.biases;
        for (o, row) in out.iter_mut().zip(self.weights.iter()) {
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(input.iter()) {
                acc += w * x;
            }
            *o += acc;
        }
        out
    }

    /// Accumulates `delta ⊗ input` into this layer and returns `Wᵀ delta`.
    #[inline(always)]
    fn accumulate(&mut self, weights: &[[f64; I]; O], delta: &[f64; O], input: &[f64; I]) -> [f64; I] {
        let mut back = [0.0; I];
        for o in 0..O {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            self.biases[o] += d;
            for i in 0..I {
                self.weights[o][i] += d * input[i];
                back[i] += d * weights[o][i];
            }
        }
        back
    }

    fn axpy(&mut self, alpha: f64, other: &Self) {
        for (row, orow) in self.weights.iter_mut().zip(other.weights.iter()) {
            for (w, g) in row.iter_mut().zip(orow.iter()) {
                *w += alpha * g;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(other.biases.iter()) {
            *b += alpha * g;
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().flatten().chain(self.biases.iter()).copied()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights.iter_mut().flatten().chain(self.biases.iter_mut())
    }
}

/// Weights and biases of the QPN (the bandit's θ).
#[derive(Debug, Clone, PartialEq)]
pub struct QpnParams {
    pub hidden1: Dense<INPUT_DIM, H1>,
    pub hidden2: Dense<H1, H2>,
    pub hidden3: Dense<H2, H3>,
    pub output: Dense<H3, 1>,
}

struct Activations {
    h1: [f64; H1],
    h2: [f64; H2],
    h3: [f64; H3],
    out: f64,
}

#[inline(always)]
fn relu<const N: usize>(mut v: [f64; N]) -> [f64; N] {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    v
}

#[inline(always)]
fn mask<const N: usize>(mut delta: [f64; N], activation: &[f64; N]) -> [f64; N] {
    for (d, a) in delta.iter_mut().zip(activation.iter()) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    delta
}

impl QpnParams {
    pub fn zeros() -> Self {
        Self {
            hidden1: Dense::zeros(),
            hidden2: Dense::zeros(),
            hidden3: Dense::zeros(),
            output: Dense::zeros(),
        }
    }

    /// Uniform initialization in `±1/√fan_in` for every weight and bias.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            hidden1: Dense::random(rng),
            hidden2: Dense::random(rng),
            hidden3: Dense::random(rng),
            output: Dense::random(rng),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(PARAM_COUNT);
        flat.extend(self.hidden1.values());
        flat.extend(self.hidden2.values());
        flat.extend(self.hidden3.values());
        flat.extend(self.output.values());
        flat
    }

    pub fn unflatten(flat: &[f64]) -> Result<Self> {
        if flat.len() != PARAM_COUNT {
            return Err(Error::DimensionMismatch {
                expected: PARAM_COUNT,
                got: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        let mut params = Self::zeros();
        for (slot, &v) in params.values_mut().zip(flat.iter()) {
            *slot = v;
        }
        Ok(params)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.hidden1
            .values_mut()
            .chain(self.hidden2.values_mut())
            .chain(self.hidden3.values_mut())
            .chain(self.output.values_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.hidden1
            .values()
            .chain(self.hidden2.values())
            .chain(self.hidden3.values())
            .chain(self.output.values())
            .all(f64::is_finite)
    }

    fn axpy(&mut self, alpha: f64, other: &Self) {
        self.hidden1.axpy(alpha, &other.hidden1);
        self.hidden2.axpy(alpha, &other.hidden2);
        self.hidden3.axpy(alpha, &other.hidden3);
        self.output.axpy(alpha, &other.output);
    }

    #[inline]
    fn activations(&self, x: &Context) -> Activations {
        let h1 = relu(self.hidden1.affine(&x.0));
        let h2 = relu(self.hidden2.affine(&h1));
        let h3 = relu(self.hidden3.affine(&h2));
        let out = self.output.affine(&h3)[0];
        Activations { h1, h2, h3, out }
    }

    /// Adds `upstream · ∂r̂/∂θ` at `x` into `grad`.
    #[inline]
    fn backprop_into(&self, x: &Context, acts: &Activations, upstream: f64, grad: &mut QpnParams) {
        let d3 = grad.output.accumulate(&self.output.weights, &[upstream], &acts.h3);
        let d3 = mask(d3, &acts.h3);
        let d2 = grad.hidden3.accumulate(&self.hidden3.weights, &d3, &acts.h2);
        let d2 = mask(d2, &acts.h2);
        let d1 = grad.hidden2.accumulate(&self.hidden2.weights, &d2, &acts.h1);
        let d1 = mask(d1, &acts.h1);
        grad.hidden1.accumulate(&self.hidden1.weights, &d1, &x.0);
    }
}

/// Predicted QoE `r̂(x; θ)`.
pub fn forward(params: &QpnParams, x: &Context) -> f64 {
    params.activations(x).out
}

/// Exact gradient `∂r̂/∂θ` at `x`, flattened in [`QpnParams::flatten`] order.
pub fn gradient(params: &QpnParams, x: &Context) -> Vec<f64> {
    let acts = params.activations(x);
    let mut grad = QpnParams::zeros();
    params.backprop_into(x, &acts, 1.0, &mut grad);
    grad.flatten()
}

/// Summed squared error `Σ (r̂(x; θ) − r)²` over the dataset.
pub fn loss(params: &QpnParams, dataset: &[Sample]) -> f64 {
    dataset
        .iter()
        .map(|(x, r)| {
            let e = forward(params, x) - r;
            e * e
        })
        .sum()
}

/// How the per-sample squared errors are combined into the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// `Σ (r̂ − r)²`.
    #[default]
    Sum,
    /// `Σ (r̂ − r)² / |X|`; keeps the step size stable as the dataset grows.
    Mean,
}

/// Full-batch gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default)]
    pub reduction: LossReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            steps: 100,
            reduction: LossReduction::Sum,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be a finite nonnegative number, got {}",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("training steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStatus {
    Trained,
    /// Nothing to fit; parameters returned unchanged.
    EmptyDataset,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: QpnParams,
    /// Summed loss before the first step.
    pub initial_loss: f64,
    /// Summed loss after the last step.
    pub final_loss: f64,
    pub status: TrainStatus,
}

/// Warm-started full-batch gradient descent on the squared-error loss.
///
/// Runs `cfg.steps` updates `θ ← θ − η ∇L(θ)` starting from `params`.
pub fn train_qpn(params: &QpnParams, dataset: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        log::warn!("train_qpn called with an empty dataset; parameters left unchanged");
        return Ok(TrainOutcome {
            params: params.clone(),
            initial_loss: 0.0,
            final_loss: 0.0,
            status: TrainStatus::EmptyDataset,
        });
    }
    if dataset.iter().any(|(_, r)| !r.is_finite()) {
        return Err(Error::NonFinite("reward"));
    }

    let scale = match cfg.reduction {
        LossReduction::Sum => 2.0,
        LossReduction::Mean => 2.0 / dataset.len() as f64,
    };
    let mut theta = params.clone();
    let mut grad = QpnParams::zeros();
    let mut initial_loss = f64::NAN;
    for step in 0..cfg.steps {
        grad.clone_from(&ZERO);
        let mut total = 0.0;
        for (x, r) in dataset {
            let acts = theta.activations(x);
            let err = acts.out - r;
            total += err * err;
            theta.backprop_into(x, &acts, scale * err, &mut grad);
        }
        if !total.is_finite() {
            return Err(Error::Diverged { step, loss: total });
        }
        if step == 0 {
            initial_loss = total;
        }
        if cfg.learning_rate != 0.0 {
            theta.axpy(-cfg.learning_rate, &grad);
        }
    }
    let final_loss = loss(&theta, dataset);
    if !final_loss.is_finite() || !theta.is_finite() {
        return Err(Error::Diverged {
            step: cfg.steps,
            loss: final_loss,
        });
    }
    Ok(TrainOutcome {
        params: theta,
        initial_loss,
        final_loss,
        status: TrainStatus::Trained,
    })
}

/// Halvings of the step size tried by [`train_qpn_with_backoff`].
pub const MAX_STEP_HALVINGS: usize = 4;

/// [`train_qpn`] that retries from the same start with half the step size
/// when a run diverges, up to [`MAX_STEP_HALVINGS`] times.
pub fn train_qpn_with_backoff(params: &QpnParams, dataset: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut cfg = *cfg;
    let mut halvings = 0;
    loop {
        match train_qpn(params, dataset, &cfg) {
            Err(Error::Diverged { step, loss }) if halvings < MAX_STEP_HALVINGS => {
                log::warn!(
                    "training diverged at step {step} (loss {loss}) with step size {}; halving",
                    cfg.learning_rate
                );
                cfg.learning_rate /= 2.0;
                halvings += 1;
            }
            other => return other,
        }
    }
}

static ZERO: QpnParams = QpnParams {
    hidden1: Dense {
        weights: [[0.0; INPUT_DIM]; H1],
        biases: [0.0; H1],
    },
    hidden2: Dense {
        weights: [[0.0; H1]; H2],
        biases: [0.0; H2],
    },
    hidden3: Dense {
        weights: [[0.0; H2]; H3],
        biases: [0.0; H3],
    },
    output: Dense {
        weights: [[0.0; H3]; 1],
        biases: [0.0; 1],
    },
};
