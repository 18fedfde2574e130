//! Regression metrics, the clamp projection and the support-sparsity count.

use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, LabError, Result};
use crate::ridgeless::LabModel;

/// Coefficients with magnitude at or below this count as zero.
pub const ZERO_COEF_TOL: f64 = 1e-12;

/// Test-set metrics for one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r_squared: f64,
    pub mse: f64,
    pub n_test: usize,
    pub n_support: usize,
    pub r0: usize,
    pub max_train_sq_error: f64,
    pub wall_clock_seconds: f64,
}

/// `1 - Σ(y - ŷ)² / Σ(y - ȳ)²`.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    if y_true.len() < 2 {
        return Err(dim_mismatch("R² needs at least two points"));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(LabError::DegenerateLabels);
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    if y_true.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(ss / y_true.len() as f64)
}

/// Largest `(ŷ - y)²`.
pub fn max_sq_error(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .fold(0.0, f64::max))
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(dim_mismatch(format!(
            "{} targets but {} predictions",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Clamp to `[-m, m]`.
pub fn project(v: f64, m: f64) -> f64 {
    debug_assert!(m > 0.0);
    v.clamp(-m, m)
}

/// Number of support points with a nonzero coefficient.
pub fn sparsity_r0(model: &LabModel) -> usize {
    model.alpha().iter().filter(|a| a.abs() > ZERO_COEF_TOL).count()
}
