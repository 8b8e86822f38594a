//! Regret, m-regret and average QoE over per-session logs.

use crate::error::{Error, Result};

/// One session of one simulated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionLog {
    /// 1-based session index.
    pub session: u64,
    pub chosen_arm: usize,
    pub oracle_arm: usize,
    /// Realized QoE delivered to the user.
    pub reward: f64,
    /// Noise-free QoE of the chosen arm.
    pub expected_reward: f64,
    /// Noise-free QoE of the oracle's arm.
    pub oracle_expected_reward: f64,
    pub solicited: bool,
    /// `λ` when solicited, else 0.
    pub cost: f64,
}

/// Prefix sums of `oracle_expected_reward − expected_reward`.
pub fn cumulative_regret(logs: &[SessionLog]) -> Vec<f64> {
    logs.iter()
        .scan(0.0, |acc, l| {
            *acc += l.oracle_expected_reward - l.expected_reward;
            Some(*acc)
        })
        .collect()
}

/// Learning regret plus `λ` per executed solicitation.
pub fn m_regret(logs: &[SessionLog], lambda: f64) -> Vec<f64> {
    let mut asked = 0u64;
    cumulative_regret(logs)
        .into_iter()
        .zip(logs)
        .map(|(r, l)| {
            asked += l.solicited as u64;
            r + lambda * asked as f64
        })
        .collect()
}

/// Cumulative solicitation cost `λ · #solicited` per session.
pub fn cumulative_cost(logs: &[SessionLog], lambda: f64) -> Vec<f64> {
    let mut asked = 0u64;
    logs.iter()
        .map(|l| {
            asked += l.solicited as u64;
            lambda * asked as f64
        })
        .collect()
}

/// Mean realized QoE.
pub fn average_qoe(logs: &[SessionLog]) -> Result<f64> {
    if logs.is_empty() {
        return Err(Error::Empty("session logs"));
    }
    Ok(logs.iter().map(|l| l.reward).sum::<f64>() / logs.len() as f64)
}

/// Least-squares slope of `ln series_t` against `ln t` for
/// `t ∈ [t_min, t_max]`; `series[0]` holds `t = 1`.
pub fn loglog_slope(series: &[f64], t_min: usize, t_max: usize) -> Result<f64> {
    if t_min == 0 || t_min >= t_max || t_max > series.len() {
        return Err(Error::InvalidConfig(format!(
            "slope window [{t_min}, {t_max}] invalid for a series of length {}",
            series.len()
        )));
    }
    let mut points = Vec::with_capacity(t_max - t_min + 1);
    for t in t_min..=t_max {
        let v = series[t - 1];
        if !(v > 0.0) {
            return Err(Error::NonPositive { t, value: v });
        }
        points.push(((t as f64).ln(), v.ln()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
