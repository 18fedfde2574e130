//! Symmetric RBF and locally-adaptive-bandwidth (LAB) RBF kernels.
//!
//! A LAB kernel attaches a bandwidth vector to every support point:
//!
//! ```text
//! K(t, x_j) = exp(-Σ_m θ_{j,m}² (t_m - x_{j,m})²)
//! ```
//!
//! Kernel matrices follow one orientation rule, see [`ORIENTATION`]: entry
//! `(i, j)` uses the bandwidth of the column argument `x_j`. Query rows never
//! need a bandwidth of their own, and the Gram matrix on the support set is in
//! general not symmetric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, LabError, Result};
use crate::numerics::RealMatrix;

/// Orientation convention shared by every kernel matrix in this crate.
pub const ORIENTATION: &str =
    "entry (i,j) uses the bandwidth of the SECOND (column/support) argument";

/// Rows per rayon task when building kernel matrices.
const ROW_CHUNK: usize = 16;

/// Closed interval of admissible bandwidth values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBounds {
    pub min: f64,
    pub max: f64,
}

impl ThetaBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && min <= max && max.is_finite()) {
            return Err(LabError::InvalidConfig(format!(
                "bandwidth bounds must satisfy 0 < min <= max < inf, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

impl Default for ThetaBounds {
    fn default() -> Self {
        Self { min: 1e-4, max: 1e4 }
    }
}

/// One positive bandwidth vector per support point, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSet {
    dim: usize,
    values: Vec<f64>,
}

impl BandwidthSet {
    pub fn new(n_sv: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_sv * dim {
            return Err(dim_mismatch(format!(
                "{n_sv} bandwidth vectors of dimension {dim} need {} values, got {}",
                n_sv * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LabError::InvalidConfig(
                "bandwidths must be finite and positive".into(),
            ));
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = RealMatrix::from_rows(rows)?;
        Self::new(m.rows(), m.cols(), m.into_vec())
    }

    /// Every support point gets the same vector `sigma`.
    pub fn replicated(n_sv: usize, sigma: &[f64]) -> Result<Self> {
        let values = sigma.iter().copied().cycle().take(n_sv * sigma.len()).collect();
        Self::new(n_sv, sigma.len(), values)
    }

    /// Scalar-bandwidth mode: the same value in every dimension of every point.
    pub fn uniform(n_sv: usize, dim: usize, sigma: f64) -> Result<Self> {
        Self::new(n_sv, dim, vec![sigma; n_sv * dim])
    }

    pub fn n_sv(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn push(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim {
            return Err(dim_mismatch(format!(
                "bandwidth vector of length {} pushed into set of dimension {}",
                theta.len(),
                self.dim
            )));
        }
        if theta.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LabError::InvalidConfig(
                "bandwidths must be finite and positive".into(),
            ));
        }
        self.values.extend_from_slice(theta);
        Ok(())
    }

    /// Entrywise mean over support points.
    pub fn mean_row(&self) -> Vec<f64> {
        let n = self.n_sv().max(1) as f64;
        let mut mean = vec![0.0; self.dim];
        for row in self.values.chunks_exact(self.dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn within(&self, bounds: &ThetaBounds) -> bool {
        self.values.iter().all(|v| bounds.contains(*v))
    }

    pub fn clamp_to(&mut self, bounds: &ThetaBounds) {
        self.values.iter_mut().for_each(|v| *v = bounds.clamp(*v));
    }
}

#[inline]
pub(crate) fn weighted_sq_dist(t: &[f64], x: &[f64], theta: &[f64]) -> f64 {
    t.iter()
        .zip(x)
        .zip(theta)
        .map(|((t, x), th)| {
            let d = th * (t - x);
            d * d
        })
        .sum()
}

fn check_dims(t: &[f64], x: &[f64], theta: &[f64]) -> Result<()> {
    if t.len() != x.len() || x.len() != theta.len() {
        return Err(dim_mismatch(format!(
            "point dims {} and {}, bandwidth dim {}",
            t.len(),
            x.len(),
            theta.len()
        )));
    }
    Ok(())
}

/// `exp(-‖θ ⊙ (t - x)‖²)`.
pub fn lab_entry(t: &[f64], x: &[f64], theta: &[f64]) -> Result<f64> {
    check_dims(t, x, theta)?;
    Ok((-weighted_sq_dist(t, x, theta)).exp())
}

/// Gradient of [`lab_entry`] with respect to `theta`.
///
/// Component `m` is `K · (-2 θ_m (t_m - x_m)²)`.
pub fn lab_entry_grad_theta(t: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    let k = lab_entry(t, x, theta)?;
    Ok(t.iter()
        .zip(x)
        .zip(theta)
        .map(|((t, x), th)| {
            let d = t - x;
            -2.0 * k * th * d * d
        })
        .collect())
}

/// `K_Θ(rows, support)`; entry `(i, j)` uses `θ_j`.
pub fn lab_matrix(rows: &RealMatrix, support: &RealMatrix, theta: &BandwidthSet) -> Result<RealMatrix> {
    if rows.cols() != support.cols() {
        return Err(dim_mismatch(format!(
            "row points have dimension {}, support points {}",
            rows.cols(),
            support.cols()
        )));
    }
    if theta.n_sv() != support.rows() || theta.dim() != support.cols() {
        return Err(dim_mismatch(format!(
            "bandwidth set is {}x{}, support set is {}x{}",
            theta.n_sv(),
            theta.dim(),
            support.rows(),
            support.cols()
        )));
    }
    let nc = support.rows();
    let mut data = vec![0.0; rows.rows() * nc];
    if nc > 0 {
        data.par_chunks_mut(nc * ROW_CHUNK)
            .enumerate()
            .for_each(|(chunk, out)| {
                for (r, out_row) in out.chunks_exact_mut(nc).enumerate() {
                    let t = rows.row(chunk * ROW_CHUNK + r);
                    for (j, v) in out_row.iter_mut().enumerate() {
                        *v = (-weighted_sq_dist(t, support.row(j), theta.row(j))).exp();
                    }
                }
            });
    }
    Ok(RealMatrix::from_raw(rows.rows(), nc, data))
}

/// Classic RBF kernel matrix with one fixed bandwidth vector `sigma`.
pub fn rbf_matrix(x1: &RealMatrix, x2: &RealMatrix, sigma: &[f64]) -> Result<RealMatrix> {
    if x1.cols() != x2.cols() || sigma.len() != x1.cols() {
        return Err(dim_mismatch(format!(
            "point dims {} and {}, bandwidth dim {}",
            x1.cols(),
            x2.cols(),
            sigma.len()
        )));
    }
    let theta = BandwidthSet::replicated(x2.rows(), sigma)?;
    lab_matrix(x1, x2, &theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(rows: &[&[f64]]) -> RealMatrix {
        RealMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn entry_examples() {
        assert_eq!(lab_entry(&[0.3, -1.0], &[0.3, -1.0], &[7.0, 2.0]).unwrap(), 1.0);
        let v = lab_entry(&[0.0], &[1.0], &[1e-4]).unwrap();
        assert!((v - (1.0 - 1e-8)).abs() < 1e-15);
        let v = lab_entry(&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - 0.367_879_4).abs() < 1e-7);
        assert!(lab_entry(&[0.0], &[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn matrix_is_asymmetric_with_distinct_bandwidths() {
        let x = pts(&[&[0.0], &[1.0]]);
        let theta = BandwidthSet::from_rows(&[[1.0], [2.0]]).unwrap();
        let k = lab_matrix(&x, &x, &theta).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert!((k[(0, 1)] - (-4.0f64).exp()).abs() < 1e-15);
        assert!((k[(1, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k[(0, 1)] - 0.018_315_6).abs() < 1e-7);
        assert!(!k.is_symmetric(1e-3));
    }

    #[test]
    fn single_point_matrix() {
        let x = pts(&[&[0.5, 0.5]]);
        let theta = BandwidthSet::uniform(1, 2, 3.0).unwrap();
        assert_eq!(lab_matrix(&x, &x, &theta).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn rbf_examples() {
        let x = pts(&[&[0.0], &[1.0]]);
        let k = rbf_matrix(&x, &x, &[1.0]).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(k.is_symmetric(0.0));

        let y = pts(&[&[0.0, 0.0], &[0.01, 0.0], &[0.5, 0.3]]);
        let k = rbf_matrix(&y, &y, &[1e4, 1e4]).unwrap();
        for i in 0..3 {
            assert_eq!(k[(i, i)], 1.0);
            for j in 0..3 {
                if i != j {
                    assert!(k[(i, j)] < 1e-40);
                }
            }
        }
        assert!(rbf_matrix(&y, &y, &[1.0]).is_err());
    }

    #[test]
    fn grad_examples() {
        assert_eq!(
            lab_entry_grad_theta(&[1.0, 2.0], &[1.0, 2.0], &[0.5, 3.0]).unwrap(),
            vec![0.0, 0.0]
        );
        let g = lab_entry_grad_theta(&[0.0], &[1.0], &[1.0]).unwrap();
        assert!((g[0] + 0.735_758_9).abs() < 1e-7);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..100 {
            let d = rng.random_range(1..5);
            let t: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let theta: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
            let g = lab_entry_grad_theta(&t, &x, &theta).unwrap();
            for m in 0..d {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[m] += h;
                dn[m] -= h;
                let fd = (lab_entry(&t, &x, &up).unwrap() - lab_entry(&t, &x, &dn).unwrap())
                    / (2.0 * h);
                assert!((g[m] - fd).abs() < 1e-6, "analytic {} vs fd {fd}", g[m]);
                if fd.abs() > 1e-6 {
                    assert!(((g[m] - fd) / fd).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn perturbing_one_bandwidth_changes_one_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (nr, nc, d) = (7, 5, 3);
        let rows: Vec<f64> = (0..nr * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sup: Vec<f64> = (0..nc * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let th: Vec<f64> = (0..nc * d).map(|_| rng.random_range(0.5..2.0)).collect();
        let xr = RealMatrix::new(nr, d, rows).unwrap();
        let xc = RealMatrix::new(nc, d, sup).unwrap();
        let theta = BandwidthSet::new(nc, d, th.clone()).unwrap();
        let base = lab_matrix(&xr, &xc, &theta).unwrap();
        for j in 0..nc {
            let mut th2 = th.clone();
            th2[j * d + 1] *= 1.7;
            let k2 = lab_matrix(&xr, &xc, &BandwidthSet::new(nc, d, th2).unwrap()).unwrap();
            for i in 0..nr {
                for c in 0..nc {
                    if c != j {
                        assert_eq!(base[(i, c)], k2[(i, c)]);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_bandwidth_reduces_to_rbf() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 4;
        let a: Vec<f64> = (0..20 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = RealMatrix::new(20, d, a).unwrap();
        let sigma = [0.7, 1.3, 2.0, 0.4];
        let lab = lab_matrix(&x, &x, &BandwidthSet::replicated(20, &sigma).unwrap()).unwrap();
        let rbf = rbf_matrix(&x, &x, &sigma).unwrap();
        for (u, v) in lab.as_slice().iter().zip(rbf.as_slice()) {
            assert!((u - v).abs() <= 1e-15);
        }
        assert!(rbf.is_symmetric(1e-15));
        assert!(lab.as_slice().iter().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn bandwidth_set_validation() {
        assert!(BandwidthSet::new(2, 2, vec![1.0; 3]).is_err());
        assert!(BandwidthSet::new(1, 2, vec![1.0, 0.0]).is_err());
        assert!(BandwidthSet::new(1, 1, vec![-1.0]).is_err());
        let mut s = BandwidthSet::uniform(2, 2, 1.0).unwrap();
        s.push(&[4.0, 7.0]).unwrap();
        assert_eq!(s.n_sv(), 3);
        assert_eq!(s.mean_row(), vec![2.0, 3.0]);
        assert!(s.push(&[1.0]).is_err());
        let b = ThetaBounds::new(0.5, 5.0).unwrap();
        assert!(!s.within(&b));
        s.clamp_to(&b);
        assert!(s.within(&b));
        assert!(ThetaBounds::new(0.0, 1.0).is_err());
        assert!(ThetaBounds::new(2.0, 1.0).is_err());
    }
}
