//! Feedback solicitation schedules.
//!
//! * `Always` asks for QoE after every session.
//! * `FixedHorizon { horizon: T }` asks exactly `⌈T^(2/3)⌉` times, evenly
//!   spaced, starting at session 1.
//! * `UnknownHorizon { alpha }` keeps a counter `c` and asks whenever
//!   `c < t^(1 − α)`, so `⌈t^(1 − α)⌉` requests have been made after `t`
//!   sessions.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Always,
    FixedHorizon { horizon: u64 },
    UnknownHorizon { alpha: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Always => Ok(()),
            Schedule::FixedHorizon { horizon } if horizon >= 1 => Ok(()),
            Schedule::FixedHorizon { .. } => Err(Error::InvalidConfig("fixed horizon must be >= 1".into())),
            // α = 1 degenerates to a single request and is kept for sweeps.
            Schedule::UnknownHorizon { alpha } if alpha > 0.0 && alpha <= 1.0 => Ok(()),
            Schedule::UnknownHorizon { alpha } => {
                Err(Error::InvalidConfig(format!("alpha must lie in (0, 1], got {alpha}")))
            }
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Always => write!(f, "always"),
            Schedule::FixedHorizon { horizon } => write!(f, "fss:{horizon}"),
            Schedule::UnknownHorizon { alpha } => write!(f, "fssut:{alpha}"),
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    /// Parses `always`, `fss:<T>` or `fssut:<alpha>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unrecognized schedule `{s}`"));
        let schedule = match s.split_once(':') {
            None if s == "always" => Schedule::Always,
            Some(("fss", t)) => Schedule::FixedHorizon {
                horizon: t.parse().map_err(|_| bad())?,
            },
            Some(("fssut", a)) => Schedule::UnknownHorizon {
                alpha: a.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

/// Session index and number of requests made so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleState {
    /// 1-based index of the session about to run.
    pub session: u64,
    /// Requests made in sessions `1..session`.
    pub count: u64,
}

impl Default for ScheduleState {
    fn default() -> Self {
        Self { session: 1, count: 0 }
    }
}

impl ScheduleState {
    /// Decides for the current session and advances to the next one.
    pub fn advance(&mut self, schedule: &Schedule) -> Result<bool> {
        let ask = should_solicit(schedule, self)?;
        if ask {
            self.count += 1;
        }
        self.session += 1;
        Ok(ask)
    }
}

/// Smallest `L` with `L³ ≥ T²`, i.e. `⌈T^(2/3)⌉` in exact arithmetic.
pub fn ceil_two_thirds(horizon: u64) -> u64 {
    let target = (horizon as u128).pow(2);
    let mut l = (horizon as f64).powf(2.0 / 3.0).floor() as u128;
    while l > 0 && (l - 1).pow(3) >= target {
        l -= 1;
    }
    while l.pow(3) < target {
        l += 1;
    }
    l as u64
}

/// `t^(1 − α)`, snapped to the nearest integer when within rounding error so
/// that exact powers count exactly.
fn unknown_horizon_threshold(t: u64, alpha: f64) -> f64 {
    let x = (t as f64).powf(1.0 - alpha);
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r
    } else {
        x
    }
}

pub fn should_solicit(schedule: &Schedule, state: &ScheduleState) -> Result<bool> {
    let t = state.session;
    if t == 0 {
        return Err(Error::InvalidConfig("sessions are numbered from 1".into()));
    }
    match *schedule {
        Schedule::Always => Ok(true),
        Schedule::FixedHorizon { horizon } => {
            if t > horizon {
                return Err(Error::HorizonOverrun { session: t, horizon });
            }
            // Requests happen at t = ⌊(l − 1)·T / L⌋ + 1 for l = 1..=L.
            let total = ceil_two_thirds(horizon) as u128;
            let (k, horizon) = ((t - 1) as u128, horizon as u128);
            let l = (k * total).div_ceil(horizon);
            Ok(l < total && l * horizon / total == k)
        }
        Schedule::UnknownHorizon { alpha } => Ok((state.count as f64) < unknown_horizon_threshold(t, alpha)),
    }
}

/// Closed-form number of requests over `horizon` sessions.
pub fn solicitation_count(schedule: &Schedule, horizon: u64) -> u64 {
    match *schedule {
        Schedule::Always => horizon,
        Schedule::FixedHorizon { horizon: planned } => {
            // Sessions beyond the planned horizon are an error when stepping;
            // only the planned ones count here.
            let total = ceil_two_thirds(planned);
            if horizon >= planned {
                total
            } else {
                // l-th request at ⌊(l − 1)·T/L⌋ + 1 ≤ horizon  ⇔  (l − 1)·T < horizon·L
                let (t, l) = (planned as u128, total as u128);
                ((horizon as u128 * l).div_ceil(t)) as u64
            }
        }
        Schedule::UnknownHorizon { alpha } => {
            if horizon == 0 {
                0
            } else {
                unknown_horizon_threshold(horizon, alpha).ceil() as u64
            }
        }
    }
}

/// `λ · count`.
pub fn solicitation_cost(count: u64, lambda: f64) -> f64 {
    lambda * count as f64
}
