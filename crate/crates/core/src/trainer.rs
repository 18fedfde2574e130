//! Bandwidth learning with SGD plus dynamic growth of the support set.
//!
//! Each outer round runs `L` SGD steps on the bandwidths, where the loss on a
//! random batch of non-support points is differentiated *through* the
//! interpolant's coefficient solve. The interpolant is then refit, the squared
//! error of every non-support point is computed, and either training stops
//! (all errors `<= B`) or the `k` worst points join the support set.

use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{dim_mismatch, LabError, Result};
use crate::eval::max_sq_error;
use crate::kernels::{lab_matrix, BandwidthSet, ThetaBounds};
use crate::numerics::{dot, LuFactorization, RealMatrix};
use crate::ridgeless::{fit_lab, LabModel, DEFAULT_JITTER};

/// How the first `N0` support points are picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Evenly spaced ranks of the sorted labels.
    YUniform,
    /// Points nearest to k-means centers of the features.
    XKmeans,
    /// The largest labels. Deliberately poor; kept for diagnostics.
    ExtremeY,
}

impl std::str::FromStr for SelectionStrategy {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "y_uniform" => Ok(Self::YUniform),
            "x_kmeans" => Ok(Self::XKmeans),
            "extreme_y" => Ok(Self::ExtremeY),
            _ => Err(LabError::InvalidConfig(format!(
                "unknown selection strategy {s:?} (expected y_uniform, x_kmeans or extreme_y)"
            ))),
        }
    }
}

/// Update rule for the bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    /// Heavy-ball momentum: `v ← βv + g`, `θ ← θ - ηv`.
    Momentum { beta: f64 },
    /// Bias-corrected Adam; step size is roughly `η` per coordinate
    /// regardless of gradient scale.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

/// Knobs of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Squared-error tolerance `B` (normalized label units squared).
    pub error_tolerance: f64,
    /// Points added to the support set per round (`k`).
    pub grow_k: usize,
    /// Learning rate `η`.
    pub learning_rate: f64,
    /// SGD steps per round (`L`).
    pub inner_steps: usize,
    /// Initial support size `N0`.
    pub initial_support: usize,
    /// Initial bandwidth `σ0`, used in every dimension.
    pub sigma0: f64,
    pub batch_size: usize,
    pub theta_bounds: ThetaBounds,
    pub max_outer: usize,
    /// Support set may not exceed this fraction of the training data.
    pub max_support_ratio: f64,
    pub selection: SelectionStrategy,
    pub seed: u64,
    pub jitter: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            error_tolerance: 1e-3,
            grow_k: 5,
            learning_rate: 0.001,
            inner_steps: 50,
            initial_support: 20,
            sigma0: 3.0,
            batch_size: 128,
            theta_bounds: ThetaBounds::default(),
            max_outer: 500,
            max_support_ratio: 0.8,
            selection: SelectionStrategy::YUniform,
            seed: 0,
            jitter: DEFAULT_JITTER,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::InvalidConfig(msg));
        if !(self.error_tolerance > 0.0) {
            return bad(format!("B must be positive, got {}", self.error_tolerance));
        }
        if self.grow_k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be nonnegative, got {}", self.learning_rate));
        }
        if self.initial_support == 0 {
            return bad("N0 must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        ThetaBounds::new(self.theta_bounds.min, self.theta_bounds.max)?;
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if !(self.max_support_ratio > 0.0 && self.max_support_ratio <= 1.0) {
            return bad(format!(
                "max support ratio must lie in (0, 1], got {}",
                self.max_support_ratio
            ));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad(format!("jitter must be nonnegative, got {}", self.jitter));
        }
        match self.optimizer {
            Optimizer::Sgd => {}
            Optimizer::Momentum { beta } => {
                if !(0.0..1.0).contains(&beta) {
                    return bad(format!("momentum must lie in [0, 1), got {beta}"));
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                    return bad(format!(
                        "Adam needs beta1, beta2 in [0, 1) and eps > 0, got {beta1}, {beta2}, {eps}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One record per outer round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub support_size: usize,
    pub max_error: f64,
    pub mean_error: f64,
    pub inner_losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Every non-support squared error is within `B`.
    Converged,
    /// No non-support points remain.
    DataExhausted,
    /// The support ratio cap was reached with errors above `B`.
    SupportCap,
    /// `max_outer` rounds ran with errors above `B`.
    OuterCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rounds: Vec<RoundRecord>,
    pub stop_reason: StopReason,
    /// Support indices into the training data, in insertion order.
    pub support_indices: Vec<usize>,
    /// Largest squared error of the final model over all training points.
    pub final_max_sq_error: f64,
}

impl TrainTrace {
    pub fn converged(&self) -> bool {
        matches!(self.stop_reason, StopReason::Converged | StopReason::DataExhausted)
    }

    /// Line-oriented log: one JSON object per round, then a summary line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.rounds {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        let summary = serde_json::json!({
            "record": "summary",
            "stop_reason": self.stop_reason,
            "converged": self.converged(),
            "support_size": self.support_indices.len(),
            "final_max_sq_error": self.final_max_sq_error,
        });
        serde_json::to_writer(&mut w, &summary)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// Ranks `⌊i·(N-1)/(N0-1)⌋` of the label order.
fn rank_spaced(order: &[usize], n0: usize) -> Vec<usize> {
    let n = order.len();
    if n0 == 1 {
        return vec![order[0]];
    }
    (0..n0).map(|i| order[i * (n - 1) / (n0 - 1)]).collect()
}

fn label_order(y: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    order
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn nearest(points: &RealMatrix, p: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, q) in points.row_iter().enumerate() {
        let d = sq_dist(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

const KMEANS_ITERS: usize = 50;

fn kmeans_support(x: &RealMatrix, y: &[f64], n0: usize, seed: u64) -> Vec<usize> {
    let n = x.rows();
    let d = x.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = index::sample(&mut rng, n, n0).into_vec();
    let mut centers = x.select_rows(&init).into_vec();
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        let c = RealMatrix::from_raw(n0, d, centers.clone());
        for (i, p) in x.row_iter().enumerate() {
            assign[i] = nearest(&c, p);
        }
        let mut sums = vec![0.0; n0 * d];
        let mut counts = vec![0usize; n0];
        for (i, p) in x.row_iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * d..(assign[i] + 1) * d].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved = false;
        for k in 0..n0 {
            // empty clusters keep their previous center
            if counts[k] == 0 {
                continue;
            }
            for m in 0..d {
                let v = sums[k * d + m] / counts[k] as f64;
                moved |= v != centers[k * d + m];
                centers[k * d + m] = v;
            }
        }
        if !moved {
            break;
        }
    }
    let mut chosen = Vec::with_capacity(n0);
    let mut taken = vec![false; n];
    for c in centers.chunks_exact(d.max(1)).take(n0) {
        let i = nearest(x, c);
        if !taken[i] {
            taken[i] = true;
            chosen.push(i);
        }
    }
    for i in rank_spaced(&label_order(y), n0.min(n)) {
        if chosen.len() == n0 {
            break;
        }
        if !taken[i] {
            taken[i] = true;
            chosen.push(i);
        }
    }
    // rank spacing can collide with the k-means picks; fill from label order
    for i in label_order(y) {
        if chosen.len() == n0 {
            break;
        }
        if !taken[i] {
            taken[i] = true;
            chosen.push(i);
        }
    }
    chosen
}

/// Picks `n0` initial support indices from `ds`.
pub fn select_initial_support(
    ds: &Dataset,
    n0: usize,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = ds.len();
    if n0 > n {
        return Err(LabError::InsufficientData {
            requested: n0,
            available: n,
        });
    }
    if n0 == 0 {
        return Ok(Vec::new());
    }
    Ok(match strategy {
        SelectionStrategy::YUniform => rank_spaced(&label_order(&ds.y), n0),
        SelectionStrategy::ExtremeY => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| ds.y[b].total_cmp(&ds.y[a]).then(a.cmp(&b)));
            order.truncate(n0);
            order
        }
        SelectionStrategy::XKmeans => kmeans_support(&ds.x, &ds.y, n0, seed),
    })
}

/// Batch loss `Σ (y - f(x))²` of the interpolant on `batch` and its exact
/// gradient with respect to every bandwidth, row-major `n_sv × d`.
///
/// The gradient includes the dependence of `α = (K + jitter·I)⁻¹ Y` on the
/// bandwidths. Only column `j` of `K` depends on `θ_j`, which gives
///
/// ```text
/// ∂L/∂θ_jm = -2 θ_jm α_j [ Σ_b 2 r_b Kb_bj Δ_bjm² - Σ_i u_i K_ij Δ_ijm² ]
/// ```
///
/// with `r = f(X_b) - Y_b`, `u = (K + jitter·I)⁻ᵀ Kbᵀ (2r)` and `Δ` the
/// coordinate differences to support point `j`.
pub fn batch_loss_and_grad(
    support_x: &RealMatrix,
    support_y: &[f64],
    theta: &BandwidthSet,
    jitter: f64,
    batch_x: &RealMatrix,
    batch_y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = support_x.rows();
    let d = support_x.cols();
    if support_y.len() != n || batch_y.len() != batch_x.rows() {
        return Err(dim_mismatch("labels do not match their feature rows"));
    }
    let k = lab_matrix(support_x, support_x, theta)?;
    let kb = lab_matrix(batch_x, support_x, theta)?;
    let lu = LuFactorization::new(&k, jitter)?;
    let alpha = lu.solve(support_y)?;

    let resid: Vec<f64> = kb
        .row_iter()
        .zip(batch_y)
        .map(|(row, y)| dot(row, &alpha) - y)
        .collect();
    let loss: f64 = resid.iter().map(|r| r * r).sum();

    let mut g = vec![0.0; n];
    for (row, r) in kb.row_iter().zip(&resid) {
        for (gj, kv) in g.iter_mut().zip(row) {
            *gj += 2.0 * r * kv;
        }
    }
    let u = lu.solve_transpose(&g)?;

    let mut grad = vec![0.0; n * d];
    if d > 0 {
        grad.par_chunks_mut(d).enumerate().for_each(|(j, out)| {
            let xj = support_x.row(j);
            for (b, xb) in batch_x.row_iter().enumerate() {
                let w = 2.0 * resid[b] * kb[(b, j)];
                for m in 0..d {
                    let diff = xb[m] - xj[m];
                    out[m] += w * diff * diff;
                }
            }
            for (i, xi) in support_x.row_iter().enumerate() {
                let w = u[i] * k[(i, j)];
                for m in 0..d {
                    let diff = xi[m] - xj[m];
                    out[m] -= w * diff * diff;
                }
            }
            let th = theta.row(j);
            for m in 0..d {
                out[m] *= -2.0 * th[m] * alpha[j];
            }
        });
    }
    if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(LabError::NonFinite("bandwidth gradient"));
    }
    Ok((loss, grad))
}

/// Indices (into `errors`) of the `k` largest errors, largest first; ties go
/// to the lower index.
pub fn grow_support(errors: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Mutable state of the training loop over one dataset.
pub struct SupportState<'a> {
    x: &'a RealMatrix,
    y: &'a [f64],
    support: Vec<usize>,
    in_support: Vec<bool>,
    support_x: RealMatrix,
    support_y: Vec<f64>,
    remainder: Vec<usize>,
    theta: BandwidthSet,
    // first and second moment buffers, aligned with `theta`
    velocity: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
    rng: ChaCha8Rng,
}

impl<'a> SupportState<'a> {
    pub fn new(
        x: &'a RealMatrix,
        y: &'a [f64],
        support: Vec<usize>,
        theta: BandwidthSet,
        seed: u64,
    ) -> Result<Self> {
        if theta.n_sv() != support.len() || theta.dim() != x.cols() {
            return Err(dim_mismatch(format!(
                "bandwidth set is {}x{} for {} support points of dimension {}",
                theta.n_sv(),
                theta.dim(),
                support.len(),
                x.cols()
            )));
        }
        let mut in_support = vec![false; x.rows()];
        for &i in &support {
            if i >= x.rows() || in_support[i] {
                return Err(LabError::InvalidConfig(format!(
                    "support index {i} is out of range or repeated"
                )));
            }
            in_support[i] = true;
        }
        let mut s = Self {
            x,
            y,
            support_x: RealMatrix::zeros(0, x.cols()),
            support_y: Vec::new(),
            remainder: Vec::new(),
            velocity: vec![0.0; theta.as_slice().len()],
            second: vec![0.0; theta.as_slice().len()],
            steps: 0,
            support,
            in_support,
            theta,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.refresh();
        Ok(s)
    }

    fn refresh(&mut self) {
        self.support_x = self.x.select_rows(&self.support);
        self.support_y = self.support.iter().map(|&i| self.y[i]).collect();
        self.remainder = (0..self.x.rows()).filter(|&i| !self.in_support[i]).collect();
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn remainder(&self) -> &[usize] {
        &self.remainder
    }

    pub fn theta(&self) -> &BandwidthSet {
        &self.theta
    }

    pub fn fit(&self, jitter: f64) -> Result<LabModel> {
        fit_lab(&self.support_x, &self.support_y, &self.theta, jitter)
    }

    /// Adds the given data indices; each new point gets the current mean bandwidth.
    pub fn add_support(&mut self, indices: &[usize]) -> Result<()> {
        let mean = self.theta.mean_row();
        for &i in indices {
            if self.in_support[i] {
                continue;
            }
            self.in_support[i] = true;
            self.support.push(i);
            self.theta.push(&mean)?;
            self.velocity.extend(std::iter::repeat_n(0.0, mean.len()));
            self.second.extend(std::iter::repeat_n(0.0, mean.len()));
        }
        self.refresh();
        Ok(())
    }

    /// Squared errors of `model` on the non-support points, aligned with [`Self::remainder`].
    pub fn remainder_errors(&self, model: &LabModel) -> Result<Vec<f64>> {
        let xr = self.x.select_rows(&self.remainder);
        let pred = model.predict_batch(&xr)?;
        Ok(pred
            .iter()
            .zip(&self.remainder)
            .map(|(p, &i)| (p - self.y[i]) * (p - self.y[i]))
            .collect())
    }
}

/// Runs `L` clipped SGD steps on the bandwidths and returns the batch loss
/// seen at each step (before that step's update).
pub fn sgd_round(state: &mut SupportState<'_>, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(cfg.inner_steps);
    if state.remainder.is_empty() {
        return Ok(losses);
    }
    for _ in 0..cfg.inner_steps {
        let take = cfg.batch_size.min(state.remainder.len());
        let picks = index::sample(&mut state.rng, state.remainder.len(), take);
        let batch: Vec<usize> = picks.iter().map(|p| state.remainder[p]).collect();
        let bx = state.x.select_rows(&batch);
        let by: Vec<f64> = batch.iter().map(|&i| state.y[i]).collect();
        let (loss, grad) = batch_loss_and_grad(
            &state.support_x,
            &state.support_y,
            &state.theta,
            cfg.jitter,
            &bx,
            &by,
        )?;
        losses.push(loss);
        state.steps = state.steps.saturating_add(1);
        let eta = cfg.learning_rate;
        let bounds = cfg.theta_bounds;
        let theta = state.theta.values_mut();
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t = bounds.clamp(*t - eta * g);
                }
            }
            Optimizer::Momentum { beta } => {
                for ((t, v), g) in theta.iter_mut().zip(state.velocity.iter_mut()).zip(&grad) {
                    *v = beta * *v + g;
                    *t = bounds.clamp(*t - eta * *v);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(state.steps);
                let c2 = 1.0 - beta2.powi(state.steps);
                for (((t, m), v), g) in theta
                    .iter_mut()
                    .zip(state.velocity.iter_mut())
                    .zip(state.second.iter_mut())
                    .zip(&grad)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *t = bounds.clamp(*t - eta * (*m / c1) / ((*v / c2).sqrt() + eps));
                }
            }
        }
    }
    Ok(losses)
}

/// Trains on a (normalized) dataset. See [`train_with_observer`].
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(LabModel, TrainTrace)> {
    train_with_observer(ds, cfg, |_| {})
}

/// Full training loop; `observe` sees every round record as it is produced.
///
/// The returned model carries the dataset's normalization metadata when present.
pub fn train_with_observer(
    ds: &Dataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&RoundRecord),
) -> Result<(LabModel, TrainTrace)> {
    cfg.validate()?;
    let n = ds.len();
    if n == 0 {
        return Err(LabError::EmptyDataset);
    }
    let support = select_initial_support(ds, cfg.initial_support, cfg.selection, cfg.seed)?;
    let sigma0 = cfg.theta_bounds.clamp(cfg.sigma0);
    let theta = BandwidthSet::uniform(support.len(), ds.dim(), sigma0)?;
    let mut state = SupportState::new(&ds.x, &ds.y, support, theta, cfg.seed)?;
    let cap = ((cfg.max_support_ratio * n as f64).floor() as usize).max(cfg.initial_support);

    let mut rounds = Vec::new();
    let mut stop = StopReason::OuterCap;
    for round in 0..cfg.max_outer {
        let inner_losses = sgd_round(&mut state, cfg)?;
        let model = state.fit(cfg.jitter)?;
        let errors = state.remainder_errors(&model)?;
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        let mean_error = if errors.is_empty() {
            0.0
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        };
        let rec = RoundRecord {
            round,
            support_size: state.support.len(),
            max_error,
            mean_error,
            inner_losses,
        };
        observe(&rec);
        rounds.push(rec);

        if errors.is_empty() {
            stop = StopReason::DataExhausted;
            break;
        }
        if max_error <= cfg.error_tolerance {
            stop = StopReason::Converged;
            break;
        }
        if state.support.len() >= cap {
            stop = StopReason::SupportCap;
            break;
        }
        let room = cap - state.support.len();
        let picks = grow_support(&errors, cfg.grow_k.min(room));
        let add: Vec<usize> = picks.iter().map(|&p| state.remainder[p]).collect();
        state.add_support(&add)?;
    }

    let mut model = state.fit(cfg.jitter)?;
    if let Some(meta) = &ds.norm_meta {
        model = model.with_norm_meta(meta.clone())?;
    }
    let pred = model.predict_batch(&ds.x)?;
    let final_max_sq_error = max_sq_error(&ds.y, &pred)?;
    let trace = TrainTrace {
        rounds,
        stop_reason: stop,
        support_indices: state.support.clone(),
        final_max_sq_error,
    };
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize, synth, SynthFunction};
    use rand::{Rng, SeedableRng};

    fn ds_from(x: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        Dataset::new("t", RealMatrix::from_rows(&x).unwrap(), y).unwrap()
    }

    #[test]
    fn y_uniform_examples() {
        let ds = ds_from(vec![vec![0.0], vec![1.0], vec![2.0]], vec![3.0, 1.0, 2.0]);
        let mut s = select_initial_support(&ds, 2, SelectionStrategy::YUniform, 0).unwrap();
        s.sort();
        assert_eq!(s, vec![0, 1]);
        assert_eq!(select_initial_support(&ds, 1, SelectionStrategy::YUniform, 0).unwrap(), vec![1]);
        let mut all = select_initial_support(&ds, 3, SelectionStrategy::YUniform, 0).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(matches!(
            select_initial_support(&ds, 4, SelectionStrategy::YUniform, 0),
            Err(LabError::InsufficientData { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn extreme_and_kmeans_selection() {
        let ds = normalize(&synth(SynthFunction::F1, 200, 0.0, 3).unwrap());
        let top = select_initial_support(&ds, 5, SelectionStrategy::ExtremeY, 0).unwrap();
        let mut sorted = ds.y.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        for (i, &idx) in top.iter().enumerate() {
            assert_eq!(ds.y[idx], sorted[i]);
        }
        for n0 in [1, 10, 40, 200] {
            let km = select_initial_support(&ds, n0, SelectionStrategy::XKmeans, 7).unwrap();
            let mut u = km.clone();
            u.sort();
            u.dedup();
            assert_eq!(u.len(), n0);
            assert_eq!(km, select_initial_support(&ds, n0, SelectionStrategy::XKmeans, 7).unwrap());
        }
    }

    #[test]
    fn grow_support_examples() {
        assert_eq!(grow_support(&[0.5, 0.1, 0.9], 2), vec![2, 0]);
        assert_eq!(grow_support(&[0.3, 0.3, 0.3], 1), vec![0]);
        let mut all = grow_support(&[0.3, 0.1], 5);
        all.sort();
        assert_eq!(all, vec![0, 1]);
        assert!(grow_support(&[], 3).is_empty());
    }

    #[test]
    fn single_support_closed_form() {
        let sx = RealMatrix::from_rows(&[[0.0]]).unwrap();
        let theta = BandwidthSet::uniform(1, 1, 1.0).unwrap();
        let bx = RealMatrix::from_rows(&[[1.0]]).unwrap();
        let (loss, grad) = batch_loss_and_grad(&sx, &[1.0], &theta, 0.0, &bx, &[0.0]).unwrap();
        let e2 = (-2.0f64).exp();
        assert!((loss - e2).abs() < 1e-15);
        assert!((grad[0] + 4.0 * e2).abs() < 1e-15);
        assert!((loss - 0.1353).abs() < 1e-4);
        assert!((grad[0] + 0.5413).abs() < 1e-4);
    }

    #[test]
    fn batch_point_on_support_contributes_nothing() {
        let sx = RealMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.5], [-0.5, 1.0]]).unwrap();
        let sy = [0.3, -0.2, 0.8];
        let theta = BandwidthSet::from_rows(&[[1.0, 2.0], [0.5, 1.5], [2.0, 1.0]]).unwrap();
        let bx = RealMatrix::from_rows(&[[1.0, 0.5]]).unwrap();
        let (loss, grad) = batch_loss_and_grad(&sx, &sy, &theta, 0.0, &bx, &[-0.2]).unwrap();
        assert!(loss < 1e-28);
        assert!(grad.iter().all(|g| g.abs() < 1e-12), "{grad:?}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (n, d, b, h) = (5, 3, 4, 1e-5);
        for _ in 0..20 {
            let mut u = |k: usize, lo: f64, hi: f64| (0..k).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
            let sx = RealMatrix::new(n, d, u(n * d, -1.0, 1.0)).unwrap();
            let sy = u(n, -1.0, 1.0);
            let bx = RealMatrix::new(b, d, u(b * d, -1.0, 1.0)).unwrap();
            let by = u(b, -1.0, 1.0);
            let th = u(n * d, 0.1, 5.0);
            let theta = BandwidthSet::new(n, d, th.clone()).unwrap();
            let (_, grad) = batch_loss_and_grad(&sx, &sy, &theta, 1e-5, &bx, &by).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for p in 0..n * d {
                let mut up = th.clone();
                let mut dn = th.clone();
                up[p] += h;
                dn[p] -= h;
                let lp = batch_loss_and_grad(&sx, &sy, &BandwidthSet::new(n, d, up).unwrap(), 1e-5, &bx, &by).unwrap().0;
                let lm = batch_loss_and_grad(&sx, &sy, &BandwidthSet::new(n, d, dn).unwrap(), 1e-5, &bx, &by).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                num += (grad[p] - fd).powi(2);
                den += fd * fd;
            }
            assert!(num.sqrt() <= 1e-4 * den.sqrt(), "rel err {}", (num / den).sqrt());
        }
    }

    #[test]
    fn sgd_round_edge_cases() {
        let ds = normalize(&synth(SynthFunction::F1, 60, 0.0, 1).unwrap());
        let theta = BandwidthSet::uniform(5, 2, 1.0).unwrap();
        let support: Vec<usize> = (0..5).collect();
        for cfg in [
            TrainConfig { learning_rate: 0.0, inner_steps: 3, ..TrainConfig::default() },
            TrainConfig { inner_steps: 0, ..TrainConfig::default() },
        ] {
            let mut st = SupportState::new(&ds.x, &ds.y, support.clone(), theta.clone(), 0).unwrap();
            sgd_round(&mut st, &cfg).unwrap();
            assert_eq!(st.theta(), &theta);
        }
    }

    #[test]
    fn one_sgd_step_closed_form() {
        let x = RealMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let y = [1.0, 0.0];
        let theta = BandwidthSet::uniform(1, 1, 1.0).unwrap();
        let mut st = SupportState::new(&x, &y, vec![0], theta, 0).unwrap();
        let cfg = TrainConfig { learning_rate: 0.1, inner_steps: 1, jitter: 0.0, ..TrainConfig::default() };
        sgd_round(&mut st, &cfg).unwrap();
        let expected = 1.0 + 0.1 * 4.0 * (-2.0f64).exp();
        assert!((st.theta().as_slice()[0] - expected).abs() < 1e-15);
        assert!((st.theta().as_slice()[0] - 1.054_13).abs() < 1e-5);
    }

    #[test]
    fn first_adam_step_moves_each_coordinate_by_eta() {
        let x = RealMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let y = [1.0, 0.0];
        let theta = BandwidthSet::uniform(1, 1, 1.0).unwrap();
        let mut st = SupportState::new(&x, &y, vec![0], theta, 0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            inner_steps: 1,
            jitter: 0.0,
            optimizer: Optimizer::ADAM,
            ..TrainConfig::default()
        };
        sgd_round(&mut st, &cfg).unwrap();
        // gradient is negative, so θ increases by η·g/(|g| + eps)
        assert!((st.theta().as_slice()[0] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn clipping_respects_bounds() {
        let ds = normalize(&synth(SynthFunction::F1, 80, 0.0, 2).unwrap());
        let bounds = ThetaBounds::new(0.9, 1.1).unwrap();
        let cfg = TrainConfig { learning_rate: 50.0, inner_steps: 5, theta_bounds: bounds, ..TrainConfig::default() };
        let theta = BandwidthSet::uniform(6, 2, 1.0).unwrap();
        let mut st = SupportState::new(&ds.x, &ds.y, (0..6).collect(), theta, 0).unwrap();
        sgd_round(&mut st, &cfg).unwrap();
        assert!(st.theta().within(&bounds));
        assert!(st.theta().as_slice().iter().any(|&t| t == 0.9 || t == 1.1));
    }

    #[test]
    fn huge_tolerance_stops_after_first_round() {
        let ds = normalize(&synth(SynthFunction::F1, 100, 0.0, 5).unwrap());
        let cfg = TrainConfig { error_tolerance: 10.0, initial_support: 10, inner_steps: 5, ..TrainConfig::default() };
        let (model, trace) = train(&ds, &cfg).unwrap();
        assert_eq!(trace.rounds.len(), 1);
        assert_eq!(trace.stop_reason, StopReason::Converged);
        assert_eq!(model.n_support(), 10);
    }

    #[test]
    fn all_points_as_support_interpolates() {
        let ds = normalize(&synth(SynthFunction::F2, 15, 0.0, 5).unwrap());
        let cfg = TrainConfig { initial_support: 15, jitter: 0.0, sigma0: 2.0, ..TrainConfig::default() };
        let (model, trace) = train(&ds, &cfg).unwrap();
        assert_eq!(model.n_support(), 15);
        assert_eq!(trace.stop_reason, StopReason::DataExhausted);
        assert!(trace.final_max_sq_error < 1e-12);
    }

    #[test]
    fn support_only_grows_and_respects_cap() {
        let ds = normalize(&synth(SynthFunction::F1, 120, 0.3, 8).unwrap());
        let cfg = TrainConfig {
            error_tolerance: 1e-9,
            initial_support: 5,
            grow_k: 7,
            inner_steps: 3,
            max_support_ratio: 0.25,
            ..TrainConfig::default()
        };
        let (model, trace) = train(&ds, &cfg).unwrap();
        assert_eq!(trace.stop_reason, StopReason::SupportCap);
        assert_eq!(model.n_support(), 30);
        assert!(trace.rounds.windows(2).all(|w| w[0].support_size <= w[1].support_size));
        let mut seen = trace.support_indices.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), trace.support_indices.len());
        assert!(!trace.converged());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { error_tolerance: 0.0, ..TrainConfig::default() },
            TrainConfig { grow_k: 0, ..TrainConfig::default() },
            TrainConfig { initial_support: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { max_support_ratio: 1.5, ..TrainConfig::default() },
            TrainConfig { theta_bounds: ThetaBounds { min: 0.0, max: 1.0 }, ..TrainConfig::default() },
            TrainConfig { optimizer: Optimizer::Momentum { beta: 1.0 }, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
