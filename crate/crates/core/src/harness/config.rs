//! Experiment configuration.
//!
//! Configs are flat TOML key/value files whose keys mirror
//! [`ExperimentConfig`]; environment overrides live under `env.*` keys.
//!
//! ```toml
//! policy = "neural_ucb"
//! schedule = "fss:200"
//! sessions = 200
//! users = 50
//! lambda = 0.13
//! env.battery_low_prob = 0.3
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::RefinementConfig;
use crate::bandit::{RetrainFrom, DEFAULT_GAMMA, DEFAULT_WIDTH_H};
use crate::error::{Error, Result};
use crate::qpn::{LossReduction, TrainConfig};
use crate::simenv::EnvConfig;
use crate::solicitation::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    NeuralUcb,
    NeuralUcbTransfer,
    /// NeuralUCB with feedback refinement of aggregated ratings.
    NeuralUcbAgg,
    LinUcb,
    Random,
    Fixed(usize),
    Oracle,
}

impl Policy {
    /// Whether the policy consumes feedback (and hence solicits it).
    pub fn learns(&self) -> bool {
        matches!(
            self,
            Policy::NeuralUcb | Policy::NeuralUcbTransfer | Policy::NeuralUcbAgg | Policy::LinUcb
        )
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::NeuralUcb => write!(f, "neural_ucb"),
            Policy::NeuralUcbTransfer => write!(f, "neural_ucb_transfer"),
            Policy::NeuralUcbAgg => write!(f, "neural_ucb_agg"),
            Policy::LinUcb => write!(f, "linucb"),
            Policy::Random => write!(f, "random"),
            Policy::Fixed(m) => write!(f, "fixed:{m}"),
            Policy::Oracle => write!(f, "oracle"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "neural_ucb" => Policy::NeuralUcb,
            "neural_ucb_transfer" => Policy::NeuralUcbTransfer,
            "neural_ucb_agg" => Policy::NeuralUcbAgg,
            "linucb" => Policy::LinUcb,
            "random" => Policy::Random,
            "oracle" => Policy::Oracle,
            other => {
                let arm = other
                    .strip_prefix("fixed:")
                    .or_else(|| other.strip_prefix("fixed(").and_then(|r| r.strip_suffix(')')))
                    .and_then(|m| m.parse().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown policy `{other}`")))?;
                Policy::Fixed(arm)
            }
        })
    }
}

impl Serialize for Policy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// How within-session ratings are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One selection per session, one individual rating.
    None,
    /// Equal-weight average over the session's selections.
    Mean,
    /// Geometric weights favouring later selections.
    Sequence,
}

impl FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Aggregation::None),
            "mean" => Ok(Aggregation::Mean),
            "sequence" => Ok(Aggregation::Sequence),
            other => Err(Error::InvalidConfig(format!("unknown aggregation `{other}`"))),
        }
    }
}

fn schedule_de<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Schedule, D::Error> {
    String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
}

fn schedule_ser<S: serde::Serializer>(s: &Schedule, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.serialize_str(&s.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub policy: Policy,
    #[serde(deserialize_with = "schedule_de", serialize_with = "schedule_ser")]
    pub schedule: Schedule,
    pub sessions: u64,
    pub users: usize,
    /// Base seed; repetition `r` uses `seed + r`.
    pub seed: u64,
    pub repetitions: usize,
    /// Unit solicitation cost λ.
    pub lambda: f64,
    pub gamma: f64,
    pub width_h: f64,
    pub learning_rate: f64,
    pub train_steps: usize,
    pub loss_reduction: LossReduction,
    pub retrain_from: RetrainFrom,
    pub linucb_alpha: f64,
    pub aggregation: Aggregation,
    /// Probability that a solicited rating arrives aggregated.
    pub mixed_fraction: f64,
    /// Upper bound of the per-session number of selections `K ~ U{1..max}`.
    pub max_changes: usize,
    pub refine_tolerance: f64,
    pub refine_max_iterations: usize,
    /// Step size and steps of the training passes inside feedback refinement.
    pub refine_learning_rate: f64,
    pub refine_steps: usize,
    pub pretrain_users: usize,
    pub pretrain_samples_per_user: usize,
    pub pretrain_learning_rate: f64,
    pub pretrain_steps: usize,
    /// Worker threads for independent runs; 0 uses all available cores.
    pub threads: usize,
    pub env: EnvConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            policy: Policy::NeuralUcb,
            schedule: Schedule::Always,
            sessions: 200,
            users: 50,
            seed: 0,
            repetitions: 1,
            lambda: 0.13,
            gamma: DEFAULT_GAMMA,
            width_h: DEFAULT_WIDTH_H,
            learning_rate: 0.2,
            train_steps: 100,
            loss_reduction: LossReduction::Mean,
            retrain_from: RetrainFrom::Initial,
            linucb_alpha: 1.0,
            aggregation: Aggregation::None,
            mixed_fraction: 1.0,
            max_changes: 4,
            refine_tolerance: 1e-3,
            refine_max_iterations: 50,
            refine_learning_rate: 0.03,
            refine_steps: 100,
            pretrain_users: 50,
            pretrain_samples_per_user: 10,
            pretrain_learning_rate: 0.2,
            pretrain_steps: 100,
            threads: 0,
            env: EnvConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            steps: self.train_steps,
            reduction: self.loss_reduction,
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.pretrain_learning_rate,
            steps: self.pretrain_steps,
            reduction: self.loss_reduction,
        }
    }

    pub fn refinement_config(&self) -> RefinementConfig {
        RefinementConfig {
            residual_tolerance: self.refine_tolerance,
            max_iterations: self.refine_max_iterations,
            train: TrainConfig {
                learning_rate: self.refine_learning_rate,
                steps: self.refine_steps,
                reduction: self.loss_reduction,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.sessions == 0 {
            return bad("sessions must be >= 1");
        }
        if self.users == 0 {
            return bad("users must be >= 1");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.mixed_fraction) {
            return bad("mixed_fraction must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if self.max_changes == 0 {
            return bad("max_changes must be >= 1");
        }
        if !(self.linucb_alpha >= 0.0) {
            return bad("linucb_alpha must be >= 0");
        }
        if !(self.gamma >= 0.0) || !(self.width_h > 0.0) {
            return bad("gamma must be >= 0 and width_h > 0");
        }
        if self.pretrain_users == 0 || self.pretrain_samples_per_user == 0 {
            return bad("pretraining needs at least one user and one sample");
        }
        if let Policy::Fixed(m) = self.policy {
            if m >= self.env.catalog.len() {
                return Err(Error::InvalidConfig(format!(
                    "fixed arm {m} out of range for {} candidates",
                    self.env.catalog.len()
                )));
            }
        }
        if let Schedule::FixedHorizon { horizon } = self.schedule {
            if horizon < self.sessions {
                return Err(Error::InvalidConfig(format!(
                    "fixed solicitation horizon {horizon} is shorter than {} sessions",
                    self.sessions
                )));
            }
        }
        self.schedule.validate()?;
        self.train_config().validate()?;
        self.pretrain_config().validate()?;
        self.refinement_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_names_round_trip() {
        for p in [
            Policy::NeuralUcb,
            Policy::NeuralUcbTransfer,
            Policy::NeuralUcbAgg,
            Policy::LinUcb,
            Policy::Random,
            Policy::Fixed(2),
            Policy::Oracle,
        ] {
            assert_eq!(p.to_string().parse::<Policy>().unwrap(), p);
        }
        assert_eq!("fixed(1)".parse::<Policy>().unwrap(), Policy::Fixed(1));
        assert!("greedy".parse::<Policy>().is_err());
    }

    #[test]
    fn parses_flat_toml() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            policy = "fixed:1"
            schedule = "fssut:0.4"
            sessions = 30
            users = 2
            aggregation = "sequence"
            env.battery_low_prob = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.policy, Policy::Fixed(1));
        assert_eq!(cfg.schedule, Schedule::UnknownHorizon { alpha: 0.4 });
        assert_eq!(cfg.aggregation, Aggregation::Sequence);
        assert_eq!(cfg.env.battery_low_prob, 0.5);
        assert_eq!(cfg.env.catalog.len(), 3);
        assert_eq!(cfg.lambda, 0.13);
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(ExperimentConfig::from_toml("sessions = 0").is_err());
        assert!(ExperimentConfig::from_toml("mixed_fraction = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("policy = \"fixed:3\"").is_err());
        assert!(ExperimentConfig::from_toml("schedule = \"fss:10\"\nsessions = 20").is_err());
        assert!(ExperimentConfig::from_toml("no_such_key = 1").is_err());
    }
}
