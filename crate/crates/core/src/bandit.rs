//! Arm-selection policies: NeuralUCB (with optional transferred
//! initialization) and the LinUCB, random and fixed baselines.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{ConfidenceMatrix, UpdateStatus};
use crate::error::{Error, Result};
use crate::qpn::{self, Context, QpnParams, Sample, TrainConfig, TrainOutcome, PARAM_COUNT};

/// Default exploration scale γ.
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Default width constant h: the total number of hidden nodes (8 + 16 + 8).
pub const DEFAULT_WIDTH_H: f64 = 32.0;

const QUADRATIC_FORM_TOLERANCE: f64 = -1e-9;

/// Candidate contexts for one decision, one per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSet {
    contexts: Vec<Context>,
}

impl ArmSet {
    pub fn new(contexts: Vec<Context>) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::Empty("arm set"));
        }
        Ok(Self { contexts })
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Starting point of each retraining pass.
///
/// Warm starting from the previous θ piles up gradient steps over the whole
/// run and ends up fitting rating noise, so by default every pass starts
/// again from the initial (random or transferred) parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainFrom {
    #[default]
    Initial,
    Previous,
}

/// NeuralUCB learner state.
#[derive(Debug, Clone)]
pub struct BanditState {
    pub theta: QpnParams,
    initial: QpnParams,
    retrain_from: RetrainFrom,
    confidence: ConfidenceMatrix,
    gamma: f64,
    width_h: f64,
    /// Context-QoE pairs observed so far.
    pub dataset: Vec<Sample>,
}

/// What happened during [`BanditState::observe_reward`].
#[derive(Debug, Clone)]
pub struct ObserveOutcome {
    pub confidence: UpdateStatus,
    pub training: TrainOutcome,
}

fn check_hyper(gamma: f64, width_h: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {gamma}")));
    }
    if !(width_h > 0.0 && width_h.is_finite()) {
        return Err(Error::InvalidConfig(format!("width h must be > 0, got {width_h}")));
    }
    Ok(())
}

impl BanditState {
    /// Fresh learner with seeded random θ and `Z = I`.
    pub fn init_state(seed: u64, gamma: f64, width_h: f64) -> Result<Self> {
        let theta = QpnParams::random(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::init_with_transfer(theta, gamma, width_h)
    }

    /// Fresh learner starting from pre-trained parameters.
    pub fn init_with_transfer(pretrained: QpnParams, gamma: f64, width_h: f64) -> Result<Self> {
        check_hyper(gamma, width_h)?;
        if !pretrained.is_finite() {
            return Err(Error::NonFinite("pretrained parameters"));
        }
        Ok(Self {
            initial: pretrained.clone(),
            theta: pretrained,
            retrain_from: RetrainFrom::default(),
            confidence: ConfidenceMatrix::identity(PARAM_COUNT),
            gamma,
            width_h,
            dataset: Vec::new(),
        })
    }

    pub fn with_retrain_from(mut self, from: RetrainFrom) -> Self {
        self.retrain_from = from;
        self
    }

    pub fn retrain_from(&self) -> RetrainFrom {
        self.retrain_from
    }

    /// Parameters the learner started from.
    pub fn initial(&self) -> &QpnParams {
        &self.initial
    }

    /// Fixed starting point for retraining, or `None` when warm starting.
    pub fn retrain_origin(&self) -> Option<&QpnParams> {
        match self.retrain_from {
            RetrainFrom::Initial => Some(&self.initial),
            RetrainFrom::Previous => None,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn width_h(&self) -> f64 {
        self.width_h
    }

    pub fn confidence(&self) -> &ConfidenceMatrix {
        &self.confidence
    }

    /// Exploration bonus `γ √(gᵀ Z⁻¹ g / h)` for a gradient `g`.
    pub fn bonus(&self, grad: &[f64]) -> Result<f64> {
        let q = self.confidence.quadratic_form(grad)?;
        if q < QUADRATIC_FORM_TOLERANCE || !q.is_finite() {
            return Err(Error::CorruptedConfidence(q));
        }
        Ok(self.gamma * (q.max(0.0) / self.width_h).sqrt())
    }

    /// Upper confidence score for every arm.
    pub fn ucb_scores(&self, arms: &ArmSet) -> Result<Vec<f64>> {
        arms.contexts()
            .iter()
            .map(|x| {
                let predicted = qpn::forward(&self.theta, x);
                if self.gamma == 0.0 {
                    return Ok(predicted);
                }
                let g = qpn::gradient(&self.theta, x);
                Ok(predicted + self.bonus(&g)?)
            })
            .collect()
    }

    pub fn select_arm(&self, arms: &ArmSet) -> Result<usize> {
        Ok(argmax(&self.ucb_scores(arms)?))
    }

    fn scaled_gradient(&self, x: &Context) -> Vec<f64> {
        let scale = 1.0 / self.width_h.sqrt();
        qpn::gradient(&self.theta, x).into_iter().map(|v| v * scale).collect()
    }

    /// Retrains θ on the stored dataset.
    pub fn retrain(&mut self, cfg: &TrainConfig) -> Result<TrainOutcome> {
        let start = self.retrain_origin().unwrap_or(&self.theta);
        let out = qpn::train_qpn_with_backoff(start, &self.dataset, cfg)?;
        self.theta = out.params.clone();
        Ok(out)
    }

    /// Takes gradients at the current θ for `contexts`, runs `fit` (which is
    /// expected to update θ), then adds `g gᵀ / h` to `Z` for each gradient.
    pub fn observe_with<T, F>(&mut self, contexts: &[Context], fit: F) -> Result<(T, UpdateStatus)>
    where
        F: FnOnce(&mut Self) -> Result<T>,
    {
        let grads: Vec<Vec<f64>> = contexts.iter().map(|x| self.scaled_gradient(x)).collect();
        let fitted = fit(self)?;
        let mut status = UpdateStatus::RankOne;
        for u in &grads {
            if self.confidence.rank_one_update(u)? == UpdateStatus::DirectFallback {
                status = UpdateStatus::DirectFallback;
            }
        }
        Ok((fitted, status))
    }

    /// Stores solicited samples, retrains θ once on the whole dataset and
    /// updates `Z` with gradients taken before retraining.
    pub fn observe_batch(&mut self, samples: &[Sample], cfg: &TrainConfig) -> Result<ObserveOutcome> {
        if samples.iter().any(|(_, r)| !r.is_finite()) {
            return Err(Error::NonFinite("reward"));
        }
        let contexts: Vec<Context> = samples.iter().map(|(x, _)| *x).collect();
        let (training, confidence) = self.observe_with(&contexts, |s| {
            s.dataset.extend_from_slice(samples);
            s.retrain(cfg)
        })?;
        Ok(ObserveOutcome { confidence, training })
    }

    /// Single-sample [`BanditState::observe_batch`].
    pub fn observe_reward(&mut self, x: &Context, reward: f64, cfg: &TrainConfig) -> Result<ObserveOutcome> {
        self.observe_batch(&[(*x, reward)], cfg)
    }
}

/// Disjoint-arm linear UCB.
#[derive(Debug, Clone)]
pub struct LinUcbState {
    dim: usize,
    alpha: f64,
    arms: Vec<LinArm>,
}

#[derive(Debug, Clone)]
struct LinArm {
    design: DMatrix<f64>,
    design_inv: DMatrix<f64>,
    response: DVector<f64>,
}

impl LinUcbState {
    pub fn new(arm_count: usize, dim: usize, alpha: f64) -> Result<Self> {
        if arm_count == 0 || dim == 0 {
            return Err(Error::InvalidConfig("LinUCB needs at least one arm and one feature".into()));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("LinUCB alpha must be >= 0, got {alpha}")));
        }
        let arm = LinArm {
            design: DMatrix::identity(dim, dim),
            design_inv: DMatrix::identity(dim, dim),
            response: DVector::zeros(dim),
        };
        Ok(Self {
            dim,
            alpha,
            arms: vec![arm; arm_count],
        })
    }

    fn vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(DVector::from_column_slice(x))
    }

    pub fn scores(&self, contexts: &[&[f64]]) -> Result<Vec<f64>> {
        if contexts.len() != self.arms.len() {
            return Err(Error::DimensionMismatch {
                expected: self.arms.len(),
                got: contexts.len(),
            });
        }
        contexts
            .iter()
            .zip(&self.arms)
            .map(|(x, arm)| {
                let x = self.vector(x)?;
                let coef = &arm.design_inv * &arm.response;
                let width = x.dot(&(&arm.design_inv * &x));
                if width < QUADRATIC_FORM_TOLERANCE {
                    return Err(Error::Singular);
                }
                Ok(coef.dot(&x) + self.alpha * width.max(0.0).sqrt())
            })
            .collect()
    }

    pub fn select(&self, contexts: &[&[f64]]) -> Result<usize> {
        Ok(argmax(&self.scores(contexts)?))
    }

    pub fn update(&mut self, arm: usize, x: &[f64], reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        let x = self.vector(x)?;
        let state = self.arms.get_mut(arm).ok_or(Error::DimensionMismatch {
            expected: arm + 1,
            got: 0,
        })?;
        state.design += &x * x.transpose();
        state.response += &x * reward;
        let v = &state.design_inv * &x;
        let denom = 1.0 + x.dot(&v);
        if denom > 1e-12 {
            state.design_inv -= &v * v.transpose() / denom;
        } else {
            state.design_inv = state.design.clone().try_inverse().ok_or(Error::Singular)?;
        }
        Ok(())
    }
}

/// Uniform draw over `arm_count` arms.
pub fn random_select<R: Rng + ?Sized>(rng: &mut R, arm_count: usize) -> usize {
    rng.random_range(0..arm_count)
}

pub fn fixed_select(arm: usize) -> usize {
    arm
}
