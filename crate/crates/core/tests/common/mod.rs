#![allow(dead_code)]

use qoe_bandit::qpn::{Context, LAYER_DIMS, PARAM_COUNT};
use qoe_bandit::simenv::{Battery, EnvContext, UserProfile};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Straightforward dense forward pass working directly on the flat vector,
/// written independently of the library's layer structs.
pub fn reference_forward(flat: &[f64], x: &[f64]) -> f64 {
    let mut act = x.to_vec();
    let mut offset = 0;
    let layers = LAYER_DIMS.len() - 1;
    for l in 0..layers {
        let (fan_in, fan_out) = (LAYER_DIMS[l], LAYER_DIMS[l + 1]);
        let w = &flat[offset..offset + fan_in * fan_out];
        let b = &flat[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let mut next = vec![0.0; fan_out];
        for o in 0..fan_out {
            let mut z = b[o];
            for i in 0..fan_in {
                z += w[o * fan_in + i] * act[i];
            }
            next[o] = if l + 1 < layers { z.max(0.0) } else { z };
        }
        act = next;
    }
    assert_eq!(offset, PARAM_COUNT);
    act[0]
}

/// Smallest |pre-activation| over all hidden units; finite differences are
/// only meaningful away from the ReLU kink.
pub fn relu_margin(flat: &[f64], x: &[f64]) -> f64 {
    let mut act = x.to_vec();
    let mut offset = 0;
    let mut margin = f64::INFINITY;
    for l in 0..LAYER_DIMS.len() - 2 {
        let (fan_in, fan_out) = (LAYER_DIMS[l], LAYER_DIMS[l + 1]);
        let mut next = vec![0.0; fan_out];
        for o in 0..fan_out {
            let mut z = flat[offset + fan_in * fan_out + o];
            for i in 0..fan_in {
                z += flat[offset + o * fan_in + i] * act[i];
            }
            margin = margin.min(z.abs());
            next[o] = z.max(0.0);
        }
        offset += fan_in * fan_out + fan_out;
        act = next;
    }
    margin
}

pub fn random_context(rng: &mut ChaCha8Rng) -> Context {
    let mut f = [0.0; 7];
    for v in f.iter_mut() {
        *v = rng.random_range(0.0..=1.0);
    }
    Context::new(f).unwrap()
}

/// Max over coordinates of `|a − b| / max(|a|, |b|, 1e-6)` between the
/// analytic gradient and central differences with step `eps`.
pub fn gradient_relative_error(flat: &[f64], x: &[f64], analytic: &[f64], eps: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..PARAM_COUNT {
        let mut plus = flat.to_vec();
        let mut minus = flat.to_vec();
        plus[i] += eps;
        minus[i] -= eps;
        let fd = (reference_forward(&plus, x) - reference_forward(&minus, x)) / (2.0 * eps);
        let a = analytic[i];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
    }
    worst
}

/// Nominal (accuracy, delay ms) of the three candidates, typed in by hand.
pub const NOMINAL: [(f64, f64); 3] = [(0.708, 12.0), (0.735, 59.0), (0.775, 148.0)];

/// Best arm and its expected QoE, recomputed from the raw QoE formula.
pub fn enumerate_best(profile: &UserProfile, ctx: &EnvContext) -> (usize, f64) {
    let w_a = profile.loc_weight_mean[ctx.location - 1];
    let battery = match ctx.battery {
        Battery::High => 1.0,
        Battery::Low => profile.battery_low_weight,
    };
    let w_d = profile.time_weights[ctx.hour] * battery;
    let values: Vec<f64> = NOMINAL
        .iter()
        .map(|&(nacc, ndel)| w_a * ctx.brightness.powf(2.0 * (1.0 - nacc)) - w_d * ctx.cpu_temperature * ndel / 148.0)
        .collect();
    let mut best = 0;
    for m in 1..values.len() {
        if values[m] > values[best] {
            best = m;
        }
    }
    (best, values[best])
}
