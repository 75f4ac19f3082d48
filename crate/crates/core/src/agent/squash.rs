//! Log-density of a tanh-squashed diagonal Gaussian.

use std::f64::consts::{LN_2, PI};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)^2)`, stable for large `|u|`.
pub fn log1m_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Log-probability of `a = tanh(mean + std * eps)` for one component,
/// expressed through the noise `eps` and pre-squash value `u`.
pub fn component_log_prob(eps: f64, log_std: f64, u: f64) -> f64 {
    -0.5 * eps * eps - log_std - 0.5 * (2.0 * PI).ln() - log1m_tanh_sq(u)
}

/// Log-density of the squashed distribution at an action `a` in `(-1, 1)`,
/// by change of variables from the Gaussian on `atanh(a)`.
pub fn squashed_log_density(a: f64, mean: f64, log_std: f64) -> f64 {
    let u = a.atanh();
    let std = log_std.exp();
    let z = (u - mean) / std;
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln() - (1.0 - a * a).ln()
}
