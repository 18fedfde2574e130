//! Repeated-trial experiments: split, train, evaluate, aggregate.
//!
//! Results are written as JSON lines. The first line echoes the effective
//! configuration (`"record": "config"`), then one `"trial"` line per trial,
//! then a single `"aggregate"` line. Field names are stable:
//!
//! | record      | fields |
//! |-------------|--------|
//! | `config`    | `config` (the full [`ExperimentConfig`]) |
//! | `trial`     | `trial`, `n_train`, `stop_reason`, `r_squared`, `mse`, `n_test`, `n_support`, `r0`, `max_train_sq_error`, `wall_clock_seconds`, `error` |
//! | `aggregate` | `n_trials`, `n_ok`, `n_failed`, `mean_r_squared`, `std_r_squared`, `mean_support` |
//!
//! Failed trials carry `error` and no metrics; they are excluded from the
//! aggregate. The standard deviation is the population form.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, SplitSpec, SynthFunction};
use crate::error::{LabError, Result};
use crate::eval::{self, EvalReport};
use crate::ridgeless::{fit_rbf, LabModel};
use crate::trainer::{train, StopReason, TrainConfig};

/// Where the experiment's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    Csv {
        path: PathBuf,
    },
    Synth {
        function: SynthFunction,
        n: usize,
        noise_ratio: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: DataSource,
    /// Fixed test set; when given, every trial trains on the whole source.
    pub test_csv: Option<PathBuf>,
    pub train: TrainConfig,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub trials: usize,
    /// Clamp normalized test predictions to `[-M, M]`.
    pub clip: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth {
                function: SynthFunction::F1,
                n: 750,
                noise_ratio: 0.0,
                seed: 0,
            },
            test_csv: None,
            train: TrainConfig::default(),
            split_seed: 0,
            train_fraction: 0.8,
            trials: 50,
            clip: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(LabError::InvalidConfig("trials must be at least 1".into()));
        }
        SplitSpec::new(self.train_fraction, self.split_seed, 0)?;
        if let Some(m) = self.clip {
            if !(m > 0.0 && m.is_finite()) {
                return Err(LabError::InvalidConfig(format!("clip bound must be positive, got {m}")));
            }
        }
        self.train.validate()
    }

    /// Loads the raw source and optional fixed test set, then normalizes with
    /// ranges computed over all rows (source and test set together).
    pub fn load_data(&self) -> Result<(Dataset, Option<Dataset>)> {
        let raw = match &self.source {
            DataSource::Csv { path } => data::load_csv(path)?,
            DataSource::Synth {
                function,
                n,
                noise_ratio,
                seed,
            } => data::synth(*function, *n, *noise_ratio, *seed)?,
        };
        match &self.test_csv {
            None => Ok((data::normalize(&raw), None)),
            Some(p) => {
                let test = data::load_csv(p)?;
                let meta = data::normalize(&raw.concat(&test)?).norm_meta.expect("normalize sets meta");
                Ok((
                    data::apply_normalization(&raw, &meta)?,
                    Some(data::apply_normalization(&test, &meta)?),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub n_train: usize,
    pub stop_reason: Option<StopReason>,
    #[serde(flatten)]
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_trials: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_r_squared: f64,
    pub std_r_squared: f64,
    pub mean_support: f64,
}

impl Aggregate {
    pub fn from_trials(trials: &[TrialRecord]) -> Self {
        let ok: Vec<&EvalReport> = trials.iter().filter_map(|t| t.report.as_ref()).collect();
        let r2: Vec<f64> = ok.iter().map(|r| r.r_squared).collect();
        let support: Vec<f64> = ok.iter().map(|r| r.n_support as f64).collect();
        let (mean_r_squared, std_r_squared, mean_support) = if ok.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (data::mean(&r2), data::variance(&r2).sqrt(), data::mean(&support))
        };
        Self {
            n_trials: trials.len(),
            n_ok: ok.len(),
            n_failed: trials.len() - ok.len(),
            mean_r_squared,
            std_r_squared,
            mean_support,
        }
    }

    fn matches(&self, other: &Aggregate, tol: f64) -> bool {
        let close = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || (a - b).abs() <= tol;
        self.n_trials == other.n_trials
            && self.n_ok == other.n_ok
            && self.n_failed == other.n_failed
            && close(self.mean_r_squared, other.mean_r_squared)
            && close(self.std_r_squared, other.std_r_squared)
            && close(self.mean_support, other.mean_support)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ResultLine {
    Config { config: ExperimentConfig },
    Trial(TrialRecord),
    Aggregate(Aggregate),
}

/// Per-trial results plus their aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsRecord {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub aggregate: Aggregate,
}

impl ResultsRecord {
    pub fn new(config: ExperimentConfig, trials: Vec<TrialRecord>) -> Self {
        let aggregate = Aggregate::from_trials(&trials);
        Self {
            config,
            trials,
            aggregate,
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = |rec: &ResultLine| -> Result<()> {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&ResultLine::Config {
            config: self.config.clone(),
        })?;
        for t in &self.trials {
            line(&ResultLine::Trial(t.clone()))?;
        }
        line(&ResultLine::Aggregate(self.aggregate.clone()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parses a results file and checks the aggregate against the trial rows.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut config = None;
        let mut trials = Vec::new();
        let mut aggregate = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ResultLine = serde_json::from_str(&line).map_err(|e| LabError::ParseError {
                row: i + 1,
                col: e.column(),
                message: e.to_string(),
            })?;
            match rec {
                ResultLine::Config { config: c } => config = Some(c),
                ResultLine::Trial(t) => trials.push(t),
                ResultLine::Aggregate(a) => aggregate = Some(a),
            }
        }
        let config = config.ok_or_else(|| LabError::InvalidConfig("results file has no config record".into()))?;
        let stored = aggregate.ok_or_else(|| LabError::InvalidConfig("results file has no aggregate record".into()))?;
        let rec = Self::new(config, trials);
        if !rec.aggregate.matches(&stored, 1e-12) {
            return Err(LabError::InvalidConfig(format!(
                "stored aggregate {stored:?} disagrees with trial rows {:?}",
                rec.aggregate
            )));
        }
        Ok(rec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str("trial      R2          MSE   n_sv    r0  max_train_err  stop\n");
        for t in &self.trials {
            match (&t.report, &t.error) {
                (Some(r), _) => s.push_str(&format!(
                    "{:>5}  {:>8.5}  {:>11.4e}  {:>5}  {:>4}  {:>13.3e}  {}\n",
                    t.trial,
                    r.r_squared,
                    r.mse,
                    r.n_support,
                    r.r0,
                    r.max_train_sq_error,
                    t.stop_reason.map_or("-".to_string(), |x| format!("{x:?}")),
                )),
                (None, e) => s.push_str(&format!(
                    "{:>5}  failed: {}\n",
                    t.trial,
                    e.as_deref().unwrap_or("unknown error")
                )),
            }
        }
        let a = &self.aggregate;
        s.push_str(&format!(
            "R2 = {:.4} ± {:.4} over {} trials ({} failed), mean support {:.1}\n",
            a.mean_r_squared, a.std_r_squared, a.n_ok, a.n_failed, a.mean_support
        ));
        s
    }
}

/// Result of one successful train-and-evaluate run.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub model: LabModel,
    pub report: EvalReport,
    pub stop_reason: StopReason,
    pub n_train: usize,
}

/// Trains on `train_set` and scores `test_set` (both normalized).
pub fn train_and_evaluate(
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    clip: Option<f64>,
) -> Result<TrialOutput> {
    let start = Instant::now();
    let (model, trace) = train(train_set, cfg)?;
    let mut pred = model.predict_batch(&test_set.x)?.into_vec();
    if let Some(m) = clip {
        pred.iter_mut().for_each(|v| *v = eval::project(*v, m));
    }
    let report = EvalReport {
        r_squared: eval::r_squared(&test_set.y, &pred)?,
        mse: eval::mse(&test_set.y, &pred)?,
        n_test: test_set.len(),
        n_support: model.n_support(),
        r0: eval::sparsity_r0(&model),
        max_train_sq_error: trace.final_max_sq_error,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(TrialOutput {
        model,
        report,
        stop_reason: trace.stop_reason,
        n_train: train_set.len(),
    })
}

/// Runs trial `trial` of the experiment on already-normalized data.
pub fn run_trial(
    full: &Dataset,
    fixed_test: Option<&Dataset>,
    cfg: &ExperimentConfig,
    trial: usize,
) -> Result<TrialOutput> {
    let train_cfg = TrainConfig {
        seed: cfg.train.seed.wrapping_add(trial as u64),
        ..cfg.train.clone()
    };
    match fixed_test {
        Some(test) => train_and_evaluate(full, test, &train_cfg, cfg.clip),
        None => {
            let spec = SplitSpec::new(cfg.train_fraction, cfg.split_seed, trial as u64)?;
            let (tr, te) = data::split(full, &spec);
            train_and_evaluate(&tr, &te, &train_cfg, cfg.clip)
        }
    }
}

/// Runs every trial (in parallel) and collects the results in trial order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsRecord> {
    cfg.validate()?;
    let (full, test) = cfg.load_data()?;
    let trials: Vec<TrialRecord> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| match run_trial(&full, test.as_ref(), cfg, t) {
            Ok(out) => TrialRecord {
                trial: t,
                n_train: out.n_train,
                stop_reason: Some(out.stop_reason),
                report: Some(out.report),
                error: None,
            },
            Err(e) => TrialRecord {
                trial: t,
                n_train: 0,
                stop_reason: None,
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(ResultsRecord::new(cfg.clone(), trials))
}

/// Symmetric RBF interpolant trained on all of `train_set`, scored on
/// `test_set` for each scalar bandwidth in `sigmas`. Returns `(σ, R²)` pairs.
pub fn rbf_baseline(
    train_set: &Dataset,
    test_set: &Dataset,
    sigmas: &[f64],
    lambda: f64,
) -> Result<Vec<(f64, f64)>> {
    sigmas
        .iter()
        .map(|&s| {
            let sigma = vec![s; train_set.dim()];
            let model = fit_rbf(&train_set.x, &train_set.y, &sigma, lambda)?;
            let pred = model.predict_batch(&test_set.x)?;
            Ok((s, eval::r_squared(&test_set.y, &pred)?))
        })
        .collect()
}
