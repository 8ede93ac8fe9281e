//! Distribution distances over per-concept vectors.

use crate::error::{Error, Result};

/// Floor applied to every entry before normalization.
pub const NORM_FLOOR: f64 = 1e-12;

/// Clamps entries to at least [`NORM_FLOOR`] and rescales to sum 1.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = v.iter().map(|x| x.max(NORM_FLOOR)).collect();
    let total: f64 = clamped.iter().sum();
    clamped.into_iter().map(|x| x / total).collect()
}

/// `KL(p ‖ q)` after normalizing both inputs.
pub fn kl_normalized(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim(
            "kl",
            format!("lengths {} and {}", p.len(), q.len()),
        ));
    }
    if p.is_empty() {
        return Err(Error::dim("kl", "empty distributions"));
    }
    let (p, q) = (normalize(p), normalize(q));
    Ok(p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum())
}

/// Symmetric Jensen–Shannon divergence after normalization.
pub fn js_normalized(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::dim(
            "js",
            format!("lengths {} and {}", p.len(), q.len()),
        ));
    }
    let (p, q) = (normalize(p), normalize(q));
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    let half = |x: &[f64]| -> f64 { x.iter().zip(&m).map(|(a, b)| a * (a / b).ln()).sum() };
    Ok(0.5 * half(&p) + 0.5 * half(&q))
}
