//! Loss values on plain slices. The tape records the same formulas.

use serde::{Deserialize, Serialize};

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::tensor::{NeuralError, Result};
use crate::ellipse::EncodedBox;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-12;

/// Default Huber knot in encoded units.
pub const HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingScales {
    pub c_pt: f64,
    pub c_eps: f64,
}

impl Default for TrackingScales {
    fn default() -> Self {
        Self { c_pt: 1.0, c_eps: 1e-3 }
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Mean binary cross entropy. Empty input gives 0.
pub fn bce_loss(y_true: &[f64], p: &[f64]) -> Result<f64> {
    if y_true.len() != p.len() {
        return Err(NeuralError::Shape {
            op: "bce",
            left: (y_true.len(), 1),
            right: (p.len(), 1),
        });
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = y_true
        .iter()
        .zip(p)
        .map(|(&y, &p)| {
            let p = clamp_prob(p);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-s / p.len() as f64)
}

pub fn huber(x: f64, delta: f64) -> f64 {
    let ax = x.abs();
    if ax <= delta {
        0.5 * x * x
    } else {
        delta * (ax - 0.5 * delta)
    }
}

pub fn huber_grad(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}

/// Componentwise Huber over the five encoded residuals, kept only where
/// `mask` is set, divided by the total number of vertices.
pub fn huber_loss(pred: &[EncodedBox], target: &[EncodedBox], mask: &[bool], delta: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(NeuralError::Shape {
            op: "huber",
            left: (pred.len(), 5),
            right: (target.len(), mask.len()),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for ((p, t), &m) in pred.iter().zip(target).zip(mask) {
        if m {
            let (p, t) = (p.to_array(), t.to_array());
            s += (0..5).map(|k| huber(p[k] - t[k], delta)).sum::<f64>();
        }
    }
    Ok(s / pred.len() as f64)
}

/// Scaled tracking MSE. The flag is set when there are no clusters, in
/// which case the loss is 0.
pub fn mse_tracking_loss(pred: &[[f64; 2]], truth: &[[f64; 2]], scales: &TrackingScales) -> Result<(f64, bool)> {
    if pred.len() != truth.len() {
        return Err(NeuralError::Shape {
            op: "mse",
            left: (pred.len(), 2),
            right: (truth.len(), 2),
        });
    }
    if pred.is_empty() {
        return Ok((0.0, true));
    }
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let dp = (t[0] - p[0]) / scales.c_pt;
            let de = (t[1] - p[1]) / scales.c_eps;
            dp * dp + de * de
        })
        .sum();
    Ok((s / pred.len() as f64, false))
}
