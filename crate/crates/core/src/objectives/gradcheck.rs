//! Central finite-difference checks of analytic gradients.

use serde::{Deserialize, Serialize};

use super::PROB_CLAMP;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub op: String,
    /// Coordinates compared; the rest sat too close to a clamp or kink.
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate in `coords`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64, coords: &[usize]) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            probe[i] = x[i] + step;
            let hi = f(&probe);
            probe[i] = x[i] - step;
            let lo = f(&probe);
            probe[i] = x[i];
            (hi - lo) / (2.0 * step)
        })
        .collect()
}

/// Floor on the error denominator. At a stationary point the analytic
/// gradient vanishes and the central difference is left with its truncation
/// error; below this scale the check is effectively absolute at
/// `FD_TOLERANCE * GRADIENT_FLOOR`.
pub const GRADIENT_FLOOR: f64 = 1e-4;

/// `max|a - n| / max(max|a|, max|n|, GRADIENT_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(GRADIENT_FLOOR, f64::max);
    diff / scale
}

/// Distance from 0 and 1 below which log-loss curvature makes the central
/// difference truncation error (about `FD_STEP² / x²` relative) too large.
pub const PROBABILITY_MARGIN: f64 = 1e-2;

/// Probability coordinates far enough from the clamp range for a reliable
/// central difference.
pub fn interior_probability(x: f64) -> bool {
    x >= PROBABILITY_MARGIN.max(PROB_CLAMP + FD_STEP) && x <= 1.0 - PROBABILITY_MARGIN
}

/// Compares `analytic` with central differences of `f` on the coordinates
/// accepted by `checkable`.
pub fn check(
    op: &str,
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    checkable: impl Fn(usize, f64) -> bool,
) -> GradCheck {
    let coords: Vec<usize> = (0..x.len()).filter(|&i| checkable(i, x[i])).collect();
    let numeric = central_differences(f, x, FD_STEP, &coords);
    let picked: Vec<f64> = coords.iter().map(|&i| analytic[i]).collect();
    let err = if coords.is_empty() { 0.0 } else { relative_error(&picked, &numeric) };
    GradCheck {
        op: op.to_string(),
        checked: coords.len(),
        skipped: x.len() - coords.len(),
        max_rel_err: err,
        passed: err < FD_TOLERANCE,
    }
}
