//! Aggregated QoE feedback.
//!
//! When the context changes within a session, several DNNs serve the user
//! and a single rating covers all of them. Individual QoEs are recovered by
//! alternating two steps until the group residuals settle: spread each
//! record's residual `δ = r_agg − mean_k r̂(x_k)` evenly over its members,
//! then retrain the QPN on the estimates.

use crate::error::{Error, Result};
use crate::qpn::{self, Context, QpnParams, Sample, TrainConfig};

/// One aggregated rating and the selections it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedRecord {
    /// Contexts of the arms actually chosen at each change point.
    pub contexts: Vec<Context>,
    pub arms: Vec<usize>,
    pub reward: f64,
    pub session: u64,
}

impl AggregatedRecord {
    pub fn new(contexts: Vec<Context>, arms: Vec<usize>, reward: f64, session: u64) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::Empty("aggregated record"));
        }
        if contexts.len() != arms.len() {
            return Err(Error::DimensionMismatch {
                expected: contexts.len(),
                got: arms.len(),
            });
        }
        if !reward.is_finite() {
            return Err(Error::NonFinite("aggregated reward"));
        }
        Ok(Self {
            contexts,
            arms,
            reward,
            session,
        })
    }

    /// Number of selections `K` in the session.
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementConfig {
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    pub train: TrainConfig,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            residual_tolerance: 1e-3,
            max_iterations: 50,
            train: TrainConfig::default(),
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::InvalidConfig("residual tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        self.train.validate()
    }
}

/// `r_agg − (1/K) Σ_k r̂(x_k; θ)`.
pub fn group_residual(record: &AggregatedRecord, theta: &QpnParams) -> f64 {
    let k = record.len() as f64;
    let mean = record.contexts.iter().map(|x| qpn::forward(theta, x)).sum::<f64>() / k;
    record.reward - mean
}

/// Per-member estimates `r̂(x_k; θ) + δ`; their mean is `r_agg`.
pub fn individualize(record: &AggregatedRecord, theta: &QpnParams) -> Vec<f64> {
    if record.len() == 1 {
        return vec![record.reward];
    }
    let predictions: Vec<f64> = record.contexts.iter().map(|x| qpn::forward(theta, x)).collect();
    let k = predictions.len() as f64;
    let delta = record.reward - predictions.iter().sum::<f64>() / k;
    predictions.into_iter().map(|p| p + delta).collect()
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub params: QpnParams,
    /// Individualized samples from the final iteration (plain samples
    /// excluded).
    pub individualized: Vec<Sample>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-abs change in group residuals at each iteration.
    pub residual_changes: Vec<f64>,
}

fn residuals(records: &[AggregatedRecord], theta: &QpnParams) -> Result<Vec<f64>> {
    let r: Vec<f64> = records.iter().map(|rec| group_residual(rec, theta)).collect();
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("group residual"));
    }
    Ok(r)
}

fn individualize_all(records: &[AggregatedRecord], theta: &QpnParams) -> Vec<Sample> {
    records
        .iter()
        .flat_map(|rec| rec.contexts.iter().copied().zip(individualize(rec, theta)))
        .collect()
}

/// Alternates individualization and retraining until the group residuals
/// stop moving. Plain samples are used for training as-is. Each iteration
/// replaces the previous iteration's estimates.
pub fn refine(
    records: &[AggregatedRecord],
    plain: &[Sample],
    theta: &QpnParams,
    cfg: &RefinementConfig,
) -> Result<RefineOutcome> {
    refine_from(records, plain, theta, None, cfg)
}

/// [`refine`] where every training pass starts from `origin` instead of the
/// previous iterate when one is given.
pub fn refine_from(
    records: &[AggregatedRecord],
    plain: &[Sample],
    theta: &QpnParams,
    origin: Option<&QpnParams>,
    cfg: &RefinementConfig,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    if records.is_empty() && plain.is_empty() {
        return Err(Error::Empty("refinement data"));
    }

    // Single-member records have θ-independent targets: one fit is the fixed point.
    let one_pass = records.iter().all(|r| r.len() == 1);

    let mut theta = theta.clone();
    let mut previous = residuals(records, &theta)?;
    let mut changes = Vec::new();
    let mut individualized = Vec::new();
    for iteration in 1..=cfg.max_iterations {
        individualized = individualize_all(records, &theta);
        let mut data = Vec::with_capacity(individualized.len() + plain.len());
        data.extend_from_slice(&individualized);
        data.extend_from_slice(plain);
        theta = qpn::train_qpn_with_backoff(origin.unwrap_or(&theta), &data, &cfg.train)?.params;

        let current = residuals(records, &theta)?;
        let change = current
            .iter()
            .zip(&previous)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        changes.push(change);
        if one_pass || change < cfg.residual_tolerance {
            return Ok(RefineOutcome {
                params: theta,
                individualized,
                iterations: iteration,
                converged: true,
                residual_changes: changes,
            });
        }
        previous = current;
    }
    log::debug!("feedback refinement stopped at {} iterations without converging", cfg.max_iterations);
    Ok(RefineOutcome {
        params: theta,
        individualized,
        iterations: cfg.max_iterations,
        converged: false,
        residual_changes: changes,
    })
}

/// Equal-weight aggregation.
pub fn aggregate_mean(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Empty("rewards"));
    }
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// Weights `w_k = 2^k / Σ_{i=1..K} 2^i` for `k = 1..=K`.
pub fn sequence_weights(k: usize) -> Vec<f64> {
    // 2^(k−K) / (2 − 2^(1−K)) avoids overflow for long sessions.
    let norm = 2.0 - 2f64.powi(1 - k as i32);
    (1..=k).map(|i| 2f64.powi(i as i32 - k as i32) / norm).collect()
}

/// Later selections weigh more.
pub fn aggregate_sequence(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Empty("rewards"));
    }
    Ok(sequence_weights(rewards.len()).iter().zip(rewards).map(|(w, r)| w * r).sum())
}
