//! QoE-driven online selection of on-device DNN models.
//!
//! A neural contextual bandit (NeuralUCB) picks one of several candidate
//! models per application session, learning each user's QoE pattern from
//! solicited ratings. Solicitations can be rationed with a fixed- or
//! unknown-horizon schedule, and session-level aggregated ratings can be
//! split back into per-model estimates. A synthetic multi-user environment
//! and an experiment harness compare the learner with oracle, LinUCB,
//! fixed-model and random baselines.

pub mod aggregation;
pub mod bandit;
pub mod confidence;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod qpn;
pub mod simenv;
pub mod solicitation;

pub use error::{Error, Result};
