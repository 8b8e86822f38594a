//! Synthetic multi-user QoE environment.
//!
//! Each simulated user has location-dependent accuracy weights and
//! time/battery-dependent delay weights. A session draws an environment
//! context; the QoE of running a candidate DNN in that context is
//!
//! ```text
//! QoE = w_a · brt^(2(1 − nacc)) − w_d · ctemp · ndel / delay_scale
//! ```
//!
//! with `w_a = w(loc)` and `w_d = w(time) · w(battery)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qpn::Context;

pub const LOCATIONS: usize = 10;
pub const HOURS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnCandidate {
    pub id: usize,
    pub name: String,
    /// Top-1 accuracy as a fraction.
    pub nominal_accuracy: f64,
    pub nominal_delay_ms: f64,
    /// Informational only.
    pub size_mb: f64,
}

impl DnnCandidate {
    pub fn new(id: usize, name: &str, nominal_accuracy: f64, nominal_delay_ms: f64, size_mb: f64) -> Self {
        Self {
            id,
            name: name.to_string(),
            nominal_accuracy,
            nominal_delay_ms,
            size_mb,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.nominal_accuracy > 0.0 && self.nominal_accuracy < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "{}: nominal accuracy {} outside (0, 1)",
                self.name, self.nominal_accuracy
            )));
        }
        if !(self.nominal_delay_ms > 0.0 && self.nominal_delay_ms.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{}: nominal delay must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

/// The three image classifiers used in the synthetic experiments.
pub fn catalog() -> Vec<DnnCandidate> {
    vec![
        DnnCandidate::new(0, "MobileNet-v2", 0.708, 12.0, 3.4),
        DnnCandidate::new(1, "Inception-v2", 0.735, 59.0, 11.0),
        DnnCandidate::new(2, "Inception-v3", 0.775, 148.0, 23.0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Battery {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvContext {
    /// Ambient brightness in `[0.1, 1.0]`.
    pub brightness: f64,
    /// Location id in `1..=10`.
    pub location: usize,
    /// Hour of day in `0..=23`.
    pub hour: usize,
    pub battery: Battery,
    /// CPU temperature in `[0, 1]`.
    pub cpu_temperature: f64,
}

impl EnvContext {
    pub fn validate(&self) -> Result<()> {
        let ok = self.brightness > 0.0
            && self.brightness <= 1.0
            && (1..=LOCATIONS).contains(&self.location)
            && self.hour < HOURS
            && (0.0..=1.0).contains(&self.cpu_temperature);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("environment context out of range: {self:?}")))
        }
    }
}

/// Distribution parameters of the environment. Defaults reproduce the
/// standard synthetic setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub brightness_min: f64,
    pub brightness_max: f64,
    pub battery_low_prob: f64,
    /// Delay normalizer in milliseconds (the largest nominal delay).
    pub delay_scale_ms: f64,
    /// Draw `w(loc)` afresh in every session instead of once per user.
    pub resample_location_weight: bool,
    pub location_mean_max: f64,
    pub location_std_max: f64,
    pub time_weight_mean: f64,
    pub time_weight_std: f64,
    pub battery_low_weight_mean: f64,
    pub battery_low_weight_std: f64,
    pub catalog: Vec<DnnCandidate>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            brightness_min: 0.1,
            brightness_max: 1.0,
            battery_low_prob: 0.3,
            delay_scale_ms: 148.0,
            resample_location_weight: true,
            location_mean_max: 2.0,
            location_std_max: 2.0,
            time_weight_mean: 1.0,
            time_weight_std: 0.5,
            battery_low_weight_mean: 3.0,
            battery_low_weight_std: 1.0,
            catalog: catalog(),
        }
    }
}

/// Per-user preference tables.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    /// μ(loc) for locations `1..=10` (index `loc − 1`).
    pub loc_weight_mean: [f64; LOCATIONS],
    /// δ(loc).
    pub loc_weight_std: [f64; LOCATIONS],
    /// One draw of `w(loc) ~ N(μ, δ²)`, used when weights are not resampled.
    pub loc_weights: [f64; LOCATIONS],
    pub time_weights: [f64; HOURS],
    pub battery_low_weight: f64,
    pub battery_high_weight: f64,
}

impl UserProfile {
    pub fn delay_weight(&self, ctx: &EnvContext) -> f64 {
        let battery = match ctx.battery {
            Battery::High => self.battery_high_weight,
            Battery::Low => self.battery_low_weight,
        };
        self.time_weights[ctx.hour] * battery
    }
}

/// Inference accuracy `brt^(2(1 − nacc))`.
pub fn accuracy(ctx: &EnvContext, dnn: &DnnCandidate) -> f64 {
    ctx.brightness.powf(2.0 * (1.0 - dnn.nominal_accuracy))
}

/// Inference delay in milliseconds.
pub fn delay(ctx: &EnvContext, dnn: &DnnCandidate) -> f64 {
    ctx.cpu_temperature * dnn.nominal_delay_ms
}

#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            config: EnvConfig::default(),
        }
    }
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        if config.catalog.is_empty() {
            return Err(Error::Empty("catalog"));
        }
        for dnn in &config.catalog {
            dnn.validate()?;
            if dnn.nominal_delay_ms > config.delay_scale_ms {
                return Err(Error::InvalidConfig(format!(
                    "{}: nominal delay exceeds the delay scale {} ms",
                    dnn.name, config.delay_scale_ms
                )));
            }
        }
        if !(config.brightness_min > 0.0 && config.brightness_min <= config.brightness_max && config.brightness_max <= 1.0) {
            return Err(Error::InvalidConfig("brightness range must satisfy 0 < min <= max <= 1".into()));
        }
        if !(0.0..=1.0).contains(&config.battery_low_prob) {
            return Err(Error::InvalidConfig("battery_low_prob must lie in [0, 1]".into()));
        }
        if config.location_mean_max < 0.0
            || config.location_std_max < 0.0
            || config.time_weight_std < 0.0
            || config.battery_low_weight_std < 0.0
        {
            return Err(Error::InvalidConfig("distribution widths must be nonnegative".into()));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn catalog(&self) -> &[DnnCandidate] {
        &self.config.catalog
    }

    pub fn arm_count(&self) -> usize {
        self.config.catalog.len()
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvContext {
        let c = &self.config;
        let brightness = if c.brightness_min < c.brightness_max {
            rng.random_range(c.brightness_min..=c.brightness_max)
        } else {
            c.brightness_min
        };
        let location = rng.random_range(1..=LOCATIONS);
        let hour = rng.random_range(0..HOURS);
        let battery = if rng.random_bool(c.battery_low_prob) {
            Battery::Low
        } else {
            Battery::High
        };
        let cpu_temperature = rng.random_range(0.0..=1.0);
        EnvContext {
            brightness,
            location,
            hour,
            battery,
            cpu_temperature,
        }
    }

    pub fn sample_user<R: Rng + ?Sized>(&self, rng: &mut R) -> UserProfile {
        let c = &self.config;
        let mut loc_weight_mean = [0.0; LOCATIONS];
        let mut loc_weight_std = [0.0; LOCATIONS];
        let mut loc_weights = [0.0; LOCATIONS];
        for l in 0..LOCATIONS {
            loc_weight_mean[l] = rng.random_range(0.0..=c.location_mean_max);
            loc_weight_std[l] = rng.random_range(0.0..=c.location_std_max);
            loc_weights[l] = normal(loc_weight_mean[l], loc_weight_std[l]).sample(rng);
        }
        let time_dist = normal(c.time_weight_mean, c.time_weight_std);
        let mut time_weights = [0.0; HOURS];
        for w in time_weights.iter_mut() {
            *w = time_dist.sample(rng);
        }
        let battery_low_weight = normal(c.battery_low_weight_mean, c.battery_low_weight_std).sample(rng);
        UserProfile {
            loc_weight_mean,
            loc_weight_std,
            loc_weights,
            time_weights,
            battery_low_weight,
            battery_high_weight: 1.0,
        }
    }

    fn qoe_with_weight(&self, accuracy_weight: f64, profile: &UserProfile, ctx: &EnvContext, dnn: &DnnCandidate) -> f64 {
        accuracy_weight * accuracy(ctx, dnn)
            - profile.delay_weight(ctx) * delay(ctx, dnn) / self.config.delay_scale_ms
    }

    /// Realized QoE. Draws the accuracy weight from the user's location
    /// distribution when per-session resampling is enabled; always consumes
    /// exactly one normal draw so streams stay aligned across policies.
    pub fn qoe<R: Rng + ?Sized>(&self, profile: &UserProfile, ctx: &EnvContext, dnn: &DnnCandidate, rng: &mut R) -> f64 {
        let l = ctx.location - 1;
        let draw = normal(profile.loc_weight_mean[l], profile.loc_weight_std[l]).sample(rng);
        let w_a = if self.config.resample_location_weight {
            draw
        } else {
            profile.loc_weights[l]
        };
        self.qoe_with_weight(w_a, profile, ctx, dnn)
    }

    /// Noise-free mean of [`Environment::qoe`].
    pub fn expected_qoe(&self, profile: &UserProfile, ctx: &EnvContext, dnn: &DnnCandidate) -> f64 {
        let l = ctx.location - 1;
        let w_a = if self.config.resample_location_weight {
            profile.loc_weight_mean[l]
        } else {
            profile.loc_weights[l]
        };
        self.qoe_with_weight(w_a, profile, ctx, dnn)
    }

    /// Best arm by expected QoE; ties go to the lowest index.
    pub fn oracle_best(&self, profile: &UserProfile, ctx: &EnvContext) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (m, dnn) in self.config.catalog.iter().enumerate() {
            let v = self.expected_qoe(profile, ctx, dnn);
            if v > best.1 {
                best = (m, v);
            }
        }
        best
    }

    /// Encodes the environment plus a candidate's nominal statistics into
    /// the QPN's 7-feature input.
    pub fn encode(&self, ctx: &EnvContext, dnn: &DnnCandidate) -> Result<Context> {
        let battery_low = match ctx.battery {
            Battery::High => 0.0,
            Battery::Low => 1.0,
        };
        Context::new([
            ctx.brightness,
            (ctx.location - 1) as f64 / (LOCATIONS - 1) as f64,
            ctx.hour as f64 / (HOURS - 1) as f64,
            battery_low,
            ctx.cpu_temperature,
            dnn.nominal_accuracy,
            dnn.nominal_delay_ms / self.config.delay_scale_ms,
        ])
    }

    /// One context vector per catalog entry.
    pub fn arm_contexts(&self, ctx: &EnvContext) -> Result<Vec<Context>> {
        self.config.catalog.iter().map(|d| self.encode(ctx, d)).collect()
    }
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    // std is validated nonnegative and finite upstream
    Normal::new(mean, std).expect("nonnegative standard deviation")
}
