//! Closed-form kernel solvers.
//!
//! * [`LabModel`]: the LAB ridgeless interpolant
//!   `f(t) = Σ_i α_i exp(-‖θ_i ⊙ (t - x_i)‖²)` with `α = (K_Θ + jitter·I)⁻¹ Y`.
//! * [`AsymDualSolution`]: the two regressors of asymmetric kernel ridge
//!   regression and their duals, which equal the training residuals.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormMeta;
use crate::error::{dim_mismatch, LabError, Result};
use crate::eval::project;
use crate::kernels::{lab_matrix, weighted_sq_dist, BandwidthSet};
use crate::numerics::{dot, matvec, solve_regularized, LuFactorization, RealMatrix, RealVector};

/// Default diagonal jitter added before every solve.
pub const DEFAULT_JITTER: f64 = 1e-5;

const MODEL_FORMAT: &str = "labrr-model";
const MODEL_VERSION: u32 = 1;

/// Deployable LAB RBF estimator. Inputs and outputs live in normalized space;
/// `norm_meta` maps to and from original units.
#[derive(Debug, Clone, PartialEq)]
pub struct LabModel {
    support_x: RealMatrix,
    theta: BandwidthSet,
    alpha: RealVector,
    jitter: f64,
    norm_meta: NormMeta,
}

/// Solves for the coefficients of the LAB interpolant on the support set.
pub fn fit_lab(
    support_x: &RealMatrix,
    support_y: &[f64],
    theta: &BandwidthSet,
    jitter: f64,
) -> Result<LabModel> {
    if support_y.len() != support_x.rows() {
        return Err(dim_mismatch(format!(
            "{} support points but {} labels",
            support_x.rows(),
            support_y.len()
        )));
    }
    let k = lab_matrix(support_x, support_x, theta)?;
    let alpha = solve_regularized(&k, support_y, jitter)?;
    Ok(LabModel {
        support_x: support_x.clone(),
        theta: theta.clone(),
        alpha,
        jitter,
        norm_meta: NormMeta::identity(support_x.cols()),
    })
}

/// Symmetric RBF kernel ridge regression, `α = (K_σ + λI)⁻¹ Y`, packaged as a
/// LAB model whose bandwidths are all `sigma`.
pub fn fit_rbf(x: &RealMatrix, y: &[f64], sigma: &[f64], lambda: f64) -> Result<LabModel> {
    let theta = BandwidthSet::replicated(x.rows(), sigma)?;
    fit_lab(x, y, &theta, lambda)
}

impl LabModel {
    pub fn from_parts(
        support_x: RealMatrix,
        theta: BandwidthSet,
        alpha: Vec<f64>,
        jitter: f64,
        norm_meta: NormMeta,
    ) -> Result<Self> {
        let n = support_x.rows();
        let d = support_x.cols();
        if theta.n_sv() != n || theta.dim() != d {
            return Err(dim_mismatch(format!(
                "bandwidth set is {}x{}, support set is {n}x{d}",
                theta.n_sv(),
                theta.dim()
            )));
        }
        if alpha.len() != n {
            return Err(dim_mismatch(format!(
                "{} coefficients for {n} support points",
                alpha.len()
            )));
        }
        if norm_meta.dim() != d {
            return Err(dim_mismatch(format!(
                "normalization covers {} features, model has {d}",
                norm_meta.dim()
            )));
        }
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(LabError::InvalidConfig(format!("bad jitter {jitter}")));
        }
        Ok(Self {
            support_x,
            theta,
            alpha: RealVector::new(alpha)?,
            jitter,
            norm_meta,
        })
    }

    pub fn with_norm_meta(mut self, meta: NormMeta) -> Result<Self> {
        if meta.dim() != self.dim() {
            return Err(dim_mismatch(format!(
                "normalization covers {} features, model has {}",
                meta.dim(),
                self.dim()
            )));
        }
        self.norm_meta = meta;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.support_x.cols()
    }

    pub fn n_support(&self) -> usize {
        self.support_x.rows()
    }

    pub fn support_x(&self) -> &RealMatrix {
        &self.support_x
    }

    pub fn theta(&self) -> &BandwidthSet {
        &self.theta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn norm_meta(&self) -> &NormMeta {
        &self.norm_meta
    }

    /// `k_Θ(t, X_sv) · α` for one normalized point.
    pub fn predict(&self, t: &[f64]) -> Result<f64> {
        if t.len() != self.dim() {
            return Err(dim_mismatch(format!(
                "point has dimension {}, model expects {}",
                t.len(),
                self.dim()
            )));
        }
        let v: f64 = (0..self.n_support())
            .map(|j| {
                self.alpha[j]
                    * (-weighted_sq_dist(t, self.support_x.row(j), self.theta.row(j))).exp()
            })
            .sum();
        if !v.is_finite() {
            return Err(LabError::NonFinite("prediction"));
        }
        Ok(v)
    }

    /// Predictions for every row of a normalized feature matrix.
    pub fn predict_batch(&self, x: &RealMatrix) -> Result<RealVector> {
        let k = lab_matrix(x, &self.support_x, &self.theta)?;
        matvec(&k, &self.alpha)
    }

    /// Takes raw features, returns labels in original units. With `clip`,
    /// normalized outputs are first clamped to `[-M, M]`.
    pub fn predict_original(&self, raw_x: &RealMatrix, clip: Option<f64>) -> Result<Vec<f64>> {
        let x = self.norm_meta.normalize_features(raw_x)?;
        let pred = self.predict_batch(&x)?;
        Ok(pred
            .iter()
            .map(|&v| {
                let v = match clip {
                    Some(m) => project(v, m),
                    None => v,
                };
                self.norm_meta.label.denormalize(v)
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            dim: self.dim(),
            n_support: self.n_support(),
            jitter: self.jitter,
            support_x: self.support_x.row_iter().map(<[f64]>::to_vec).collect(),
            theta: self.theta.rows(),
            alpha: self.alpha.to_vec(),
            norm_meta: self.norm_meta.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(LabError::InvalidModel(format!(
                "unsupported format {:?} version {}",
                f.format, f.version
            )));
        }
        let support_x = if f.support_x.is_empty() {
            RealMatrix::new(0, f.dim, Vec::new())?
        } else {
            RealMatrix::from_rows(&f.support_x)?
        };
        if support_x.cols() != f.dim || support_x.rows() != f.n_support {
            return Err(LabError::InvalidModel(format!(
                "header says {}x{}, support matrix is {}x{}",
                f.n_support,
                f.dim,
                support_x.rows(),
                support_x.cols()
            )));
        }
        let theta_vals: Vec<f64> = f.theta.iter().flatten().copied().collect();
        if f.theta.iter().any(|r| r.len() != f.dim) {
            return Err(LabError::InvalidModel("ragged bandwidth rows".into()));
        }
        let theta = BandwidthSet::new(f.theta.len(), f.dim, theta_vals)?;
        Self::from_parts(support_x, theta, f.alpha, f.jitter, f.norm_meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    dim: usize,
    n_support: usize,
    jitter: f64,
    support_x: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    norm_meta: NormMeta,
}

/// Duals of the asymmetric least-squares formulation.
///
/// `alpha = λ(K + λI)⁻¹Y` equals the training residuals `Y - f1(X)`,
/// `beta = λ(Kᵀ + λI)⁻¹Y` equals `Y - f2(X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymDualSolution {
    pub alpha: RealVector,
    pub beta: RealVector,
    pub lambda: f64,
}

pub fn fit_asym_duals(k: &RealMatrix, y: &[f64], lambda: f64) -> Result<AsymDualSolution> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(LabError::InvalidConfig(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    if !k.is_square() || k.rows() != y.len() {
        return Err(dim_mismatch(format!(
            "kernel matrix {}x{} with {} labels",
            k.rows(),
            k.cols(),
            y.len()
        )));
    }
    // one factorization of K + λI serves both (K + λI) and its transpose
    let lu = LuFactorization::new(k, lambda)?;
    let scale = |v: Vec<f64>| RealVector::new(v.into_iter().map(|a| lambda * a).collect());
    Ok(AsymDualSolution {
        alpha: scale(lu.solve(y)?)?,
        beta: scale(lu.solve_transpose(y)?)?,
        lambda,
    })
}

/// `f1(t) = K(t, X)(K(X,X) + λI)⁻¹Y`, given `K(T, X)` with one row per test point.
pub fn predict_f1(k_test_train: &RealMatrix, duals: &AsymDualSolution) -> Result<RealVector> {
    if k_test_train.cols() != duals.alpha.len() {
        return Err(dim_mismatch(format!(
            "K(T,X) has {} columns, model has {} training points",
            k_test_train.cols(),
            duals.alpha.len()
        )));
    }
    let coef: Vec<f64> = duals.alpha.iter().map(|a| a / duals.lambda).collect();
    matvec(k_test_train, &coef)
}

/// `f2(t) = Kᵀ(X, t)(Kᵀ(X,X) + λI)⁻¹Y`, given `K(X, T)` with one column per test point.
pub fn predict_f2(k_train_test: &RealMatrix, duals: &AsymDualSolution) -> Result<RealVector> {
    if k_train_test.rows() != duals.beta.len() {
        return Err(dim_mismatch(format!(
            "K(X,T) has {} rows, model has {} training points",
            k_train_test.rows(),
            duals.beta.len()
        )));
    }
    let coef: Vec<f64> = duals.beta.iter().map(|b| b / duals.lambda).collect();
    let out: Vec<f64> = (0..k_train_test.cols())
        .map(|j| dot(&k_train_test.column(j), &coef))
        .collect();
    RealVector::new(out)
}
