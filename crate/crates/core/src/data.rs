//! Dataset loading, affine normalization to `[-1, 1]`, seeded splits and the
//! synthetic benchmark functions.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, LabError, Result};
use crate::numerics::RealMatrix;

/// Original-unit range of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub min: f64,
    pub max: f64,
}

impl ColumnScale {
    /// Scale that leaves values untouched (`[-1, 1] -> [-1, 1]`).
    pub const IDENTITY: ColumnScale = ColumnScale { min: -1.0, max: 1.0 };

    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        Self { min, max }
    }

    /// A constant column; it normalizes to all zeros.
    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    pub fn normalize(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            2.0 * (v - self.min) / (self.max - self.min) - 1.0
        }
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            (u + 1.0) * 0.5 * (self.max - self.min) + self.min
        }
    }
}

/// Per-feature and label scales recorded by [`normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormMeta {
    pub features: Vec<ColumnScale>,
    pub label: ColumnScale,
}

impl NormMeta {
    pub fn identity(dim: usize) -> Self {
        Self {
            features: vec![ColumnScale::IDENTITY; dim],
            label: ColumnScale::IDENTITY,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Indices of constant feature columns.
    pub fn degenerate_features(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_degenerate())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn normalize_features(&self, x: &RealMatrix) -> Result<RealMatrix> {
        if x.cols() != self.dim() {
            return Err(dim_mismatch(format!(
                "features have {} columns, normalization expects {}",
                x.cols(),
                self.dim()
            )));
        }
        let data = x
            .row_iter()
            .flat_map(|r| r.iter().zip(&self.features).map(|(v, s)| s.normalize(*v)))
            .collect();
        RealMatrix::new(x.rows(), x.cols(), data)
    }

    pub fn denormalize_features(&self, x: &RealMatrix) -> Result<RealMatrix> {
        if x.cols() != self.dim() {
            return Err(dim_mismatch(format!(
                "features have {} columns, normalization expects {}",
                x.cols(),
                self.dim()
            )));
        }
        let data = x
            .row_iter()
            .flat_map(|r| r.iter().zip(&self.features).map(|(v, s)| s.denormalize(*v)))
            .collect();
        RealMatrix::new(x.rows(), x.cols(), data)
    }
}

/// Feature matrix, aligned labels and (once normalized) the scales used.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: RealMatrix,
    pub y: Vec<f64>,
    pub norm_meta: Option<NormMeta>,
    pub name: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: RealMatrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(dim_mismatch(format!(
                "{} feature rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite("labels"));
        }
        Ok(Self {
            x,
            y,
            norm_meta: None,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            norm_meta: self.norm_meta.clone(),
            name: self.name.clone(),
        }
    }

    /// Appends the rows of `other`. Normalization metadata of `self` is kept.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Ok(Dataset {
            x: self.x.vstack(&other.x)?,
            y,
            norm_meta: self.norm_meta.clone(),
            name: self.name.clone(),
        })
    }

    /// Label variance (population form).
    pub fn label_variance(&self) -> f64 {
        variance(&self.y)
    }

    /// Writes `x_1,…,x_d,y` rows with a header line.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        wtr.write_record(&header).map_err(csv_io)?;
        for (row, y) in self.x.row_iter().zip(&self.y) {
            let rec: Vec<String> = row.iter().chain(std::iter::once(y)).map(f64::to_string).collect();
            wtr.write_record(&rec).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn csv_io(e: csv::Error) -> LabError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => LabError::Io(e),
        other => LabError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Reads a numeric table. Rows and columns in errors are 1-based.
///
/// The first line is treated as a header when any of its cells fails to
/// parse as a number. When `has_label` is set the last column is the label,
/// otherwise labels are zero.
pub fn read_table<R: Read>(reader: R, has_label: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, rec) in rdr.records().enumerate() {
        let row_no = i + 1;
        let rec = rec.map_err(|e| LabError::ParseError {
            row: row_no,
            col: 0,
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, _>> = rec.iter().map(f64::from_str).collect();
        if i == 0 && parsed.iter().any(|p| p.is_err()) {
            continue;
        }
        let mut vals = Vec::with_capacity(parsed.len());
        for (c, p) in parsed.into_iter().enumerate() {
            match p {
                Ok(v) if v.is_finite() => vals.push(v),
                _ => {
                    return Err(LabError::ParseError {
                        row: row_no,
                        col: c + 1,
                        message: format!("not a finite number: {:?}", &rec[c]),
                    })
                }
            }
        }
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(LabError::ParseError {
                    row: row_no,
                    col: vals.len().min(w) + 1,
                    message: format!("expected {w} columns, found {}", vals.len()),
                })
            }
            _ => {}
        }
        rows.push(vals);
    }
    let width = match width {
        Some(w) if !rows.is_empty() => w,
        _ => return Err(LabError::EmptyDataset),
    };
    if has_label && width < 2 {
        return Err(LabError::ParseError {
            row: 1,
            col: 1,
            message: "need at least one feature column and a label column".into(),
        });
    }
    let d = if has_label { width - 1 } else { width };
    let mut x = Vec::with_capacity(rows.len() * d);
    let mut y = Vec::with_capacity(rows.len());
    for r in &rows {
        x.extend_from_slice(&r[..d]);
        y.push(if has_label { r[d] } else { 0.0 });
    }
    Dataset::new("csv", RealMatrix::new(rows.len(), d, x)?, y)
}

/// Loads a labelled CSV (last column is the label).
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)?;
    let mut ds = read_table(std::io::BufReader::new(f), true)?;
    ds.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Ok(ds)
}

/// Loads a feature-only CSV.
pub fn load_features_csv(path: impl AsRef<Path>) -> Result<RealMatrix> {
    let f = std::fs::File::open(path)?;
    Ok(read_table(std::io::BufReader::new(f), false)?.x)
}

/// Computes column ranges on `ds` and maps every column and the label to
/// `[-1, 1]`. Constant columns map to 0.
pub fn normalize(ds: &Dataset) -> Dataset {
    let d = ds.dim();
    let features: Vec<ColumnScale> = (0..d)
        .map(|j| ColumnScale::from_values(ds.x.row_iter().map(|r| r[j])))
        .collect();
    let label = ColumnScale::from_values(ds.y.iter().copied());
    let meta = NormMeta { features, label };
    apply_normalization(ds, &meta).expect("dimensions come from the dataset itself")
}

/// Normalizes `ds` with previously recorded scales.
pub fn apply_normalization(ds: &Dataset, meta: &NormMeta) -> Result<Dataset> {
    Ok(Dataset {
        x: meta.normalize_features(&ds.x)?,
        y: ds.y.iter().map(|v| meta.label.normalize(*v)).collect(),
        norm_meta: Some(meta.clone()),
        name: ds.name.clone(),
    })
}

/// Inverse of [`normalize`]; a dataset without metadata is returned unchanged.
pub fn denormalize(ds: &Dataset) -> Result<Dataset> {
    let Some(meta) = &ds.norm_meta else {
        return Ok(ds.clone());
    };
    Ok(Dataset {
        x: meta.denormalize_features(&ds.x)?,
        y: ds.y.iter().map(|v| meta.label.denormalize(*v)).collect(),
        norm_meta: None,
        name: ds.name.clone(),
    })
}

/// Train/test split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub trial_index: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64, trial_index: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(LabError::InvalidConfig(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        Ok(Self {
            train_fraction,
            seed,
            trial_index,
        })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            trial_index: 0,
        }
    }
}

/// Permutation used by [`split`]; exposed so callers can audit it.
pub fn split_permutation(n: usize, spec: &SplitSpec) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.trial_index);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Seeded shuffle; the first `⌊fraction·N⌋` rows go to train.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> (Dataset, Dataset) {
    let perm = split_permutation(ds.len(), spec);
    let n_train = (spec.train_fraction * ds.len() as f64).floor() as usize;
    (ds.subset(&perm[..n_train]), ds.subset(&perm[n_train..]))
}

/// The three synthetic regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthFunction {
    F1,
    F2,
    F3,
}

impl SynthFunction {
    pub fn dim(self) -> usize {
        match self {
            SynthFunction::F1 => 2,
            SynthFunction::F2 => 6,
            SynthFunction::F3 => 4,
        }
    }

    /// Each coordinate is sampled from `[lo, hi]`.
    pub fn domain(self) -> (f64, f64) {
        match self {
            SynthFunction::F1 => (-2.0, 2.0),
            SynthFunction::F2 => (-1.0, 1.0),
            SynthFunction::F3 => (-0.25, 0.25),
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            SynthFunction::F1 => (1.0 + (2.0 * x[0] + 3.0 * x[1]).sin()) / (3.5 + (x[0] - x[1]).sin()),
            SynthFunction::F2 => {
                10.0 * (PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.5).powi(2)
                    + 5.0 * x[3]
                    + 10.0 * x[4]
                    + 0.0 * x[5]
            }
            SynthFunction::F3 => (2.0 * PI * x[0] * x[3].sin() + (x[1] * x[2]).sin()).exp(),
        }
    }
}

impl FromStr for SynthFunction {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(SynthFunction::F1),
            "f2" => Ok(SynthFunction::F2),
            "f3" => Ok(SynthFunction::F3),
            _ => Err(LabError::UnknownFunction(s.to_string())),
        }
    }
}

impl fmt::Display for SynthFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SynthFunction::F1 => "f1",
            SynthFunction::F2 => "f2",
            SynthFunction::F3 => "f3",
        };
        f.write_str(s)
    }
}

/// A synthetic sample together with its noise-free labels.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub dataset: Dataset,
    pub clean: Vec<f64>,
}

/// Draws `n` points uniformly from the function's domain.
///
/// Gaussian label noise has variance `noise_ratio · Var(clean labels)`.
pub fn synth_sample(func: SynthFunction, n: usize, noise_ratio: f64, seed: u64) -> Result<SynthSample> {
    if n == 0 {
        return Err(LabError::EmptyDataset);
    }
    if !(noise_ratio >= 0.0 && noise_ratio.is_finite()) {
        return Err(LabError::InvalidConfig(format!(
            "noise ratio must be a finite nonnegative number, got {noise_ratio}"
        )));
    }
    let d = func.dim();
    let (lo, hi) = func.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(lo..=hi)).collect();
    let clean: Vec<f64> = x.chunks_exact(d).map(|p| func.eval(p)).collect();
    let std = (noise_ratio * variance(&clean)).sqrt();
    let y = if std > 0.0 {
        let noise = Normal::new(0.0, std).expect("std is finite and positive");
        clean.iter().map(|c| c + noise.sample(&mut rng)).collect()
    } else {
        clean.clone()
    };
    let dataset = Dataset::new(func.to_string(), RealMatrix::new(n, d, x)?, y)?;
    Ok(SynthSample { dataset, clean })
}

pub fn synth(func: SynthFunction, n: usize, noise_ratio: f64, seed: u64) -> Result<Dataset> {
    Ok(synth_sample(func, n, noise_ratio, seed)?.dataset)
}
