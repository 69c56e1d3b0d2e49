//! File formats: the dataset CSV, the fit, truth and metrics JSON documents,
//! and the long-format curve export.
//!
//! Dataset CSV has the header `curve_id,t,y`. Rows may come in any order;
//! curves are formed in order of first appearance and keep their rows in
//! file order. Floats are written in shortest round-trip form, so writing
//! and reading a dataset is the identity.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Curve, FunctionalDataset};
use crate::error::{FpcaError, Result};
use crate::orchestrator::FitConfig;
use crate::postprocess::{sign_align, FpcaFit};
use crate::simulate::{ise, true_eigenfunction, true_mean, uniform_grid, GroundTruth};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    curve_id: String,
    t: f64,
    y: f64,
}

/// Affine map of observed times onto `[0, 1]`: `t' = (t − min) / (max − min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRescale {
    pub min: f64,
    pub max: f64,
}

impl TimeRescale {
    pub fn apply(&self, t: f64) -> f64 {
        (t - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, s: f64) -> f64 {
        self.min + s * (self.max - self.min)
    }
}

fn read_rows<R: Read>(reader: R) -> Result<Vec<Row>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 3 || &headers[0] != "curve_id" || &headers[1] != "t" || &headers[2] != "y" {
        return Err(FpcaError::Invalid(format!(
            "dataset header must be curve_id,t,y, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: Row = rec?;
        if !row.t.is_finite() {
            return Err(FpcaError::Invalid(format!("curve {}: non-finite time", row.curve_id)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(FpcaError::Invalid("dataset has no rows".into()));
    }
    Ok(rows)
}

fn group_rows(rows: Vec<Row>, rescale: Option<&TimeRescale>) -> Result<FunctionalDataset> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for row in rows {
        let k = *index.entry(row.curve_id.clone()).or_insert_with(|| {
            groups.push((row.curve_id.clone(), Vec::new(), Vec::new()));
            groups.len() - 1
        });
        let t = rescale.map_or(row.t, |r| r.apply(row.t));
        groups[k].1.push(t);
        groups[k].2.push(row.y);
    }
    let curves = groups
        .into_iter()
        .map(|(id, t, y)| Curve::new(id, t, y))
        .collect::<Result<Vec<_>>>()?;
    FunctionalDataset::new(curves)
}

/// Parse a dataset. Times outside `[0, 1]` are rejected.
pub fn read_dataset<R: Read>(reader: R) -> Result<FunctionalDataset> {
    group_rows(read_rows(reader)?, None)
}

/// Parse a dataset and map its time range affinely onto `[0, 1]`.
pub fn read_dataset_rescaled<R: Read>(reader: R) -> Result<(FunctionalDataset, TimeRescale)> {
    let rows = read_rows(reader)?;
    let (min, max) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.t), hi.max(r.t)));
    if !(max > min) {
        return Err(FpcaError::Invalid(format!("cannot rescale a time range of zero width ({min})")));
    }
    let rescale = TimeRescale { min, max };
    Ok((group_rows(rows, Some(&rescale))?, rescale))
}

/// Apply a previously recorded rescale, e.g. from a manifest.
pub fn read_dataset_with<R: Read>(reader: R, rescale: Option<&TimeRescale>) -> Result<FunctionalDataset> {
    group_rows(read_rows(reader)?, rescale)
}

pub fn write_dataset<W: Write>(writer: W, data: &FunctionalDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["curve_id", "t", "y"])?;
    for c in &data.curves {
        for (t, y) in c.times.iter().zip(&c.values) {
            wtr.write_record([c.id.as_str(), &t.to_string(), &y.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_dataset_file(path: &Path) -> Result<FunctionalDataset> {
    read_dataset(File::open(path)?)
}

pub fn write_dataset_file(path: &Path, data: &FunctionalDataset) -> Result<()> {
    write_dataset(File::create(path)?, data)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Everything needed to rerun a fit: the full configuration, the input file
/// and any time rescaling, plus the outcome of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: FitConfig,
    pub seed: u64,
    pub input: Option<String>,
    pub rescale: Option<TimeRescale>,
    pub iterations: usize,
    pub converged: bool,
    pub final_metric: Option<f64>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(config: &FitConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seed: config.seed,
            input: None,
            rescale: None,
            iterations: 0,
            converged: false,
            final_metric: None,
            wall_seconds: 0.0,
        }
    }
}

/// Serialized fit. Matrices are stored as nested arrays whose outer index is
/// the first dimension listed next to each field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub num_curves: usize,
    pub num_eigen: usize,
    pub grid_size: usize,
    pub curve_ids: Vec<String>,
    /// `[grid_size]`
    pub t_g: Vec<f64>,
    /// `[grid_size]`
    pub mean: Vec<f64>,
    /// `[num_eigen][grid_size]`, one array per eigenfunction.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// `[num_curves][num_eigen]`
    pub scores: Vec<Vec<f64>>,
    /// `[num_curves][num_eigen][num_eigen]`
    pub score_covariances: Vec<Vec<Vec<f64>>>,
    /// `[num_eigen]`, descending.
    pub eigenvalues: Vec<f64>,
    /// `E(1/σ²_ε)`
    pub recip_sigsq_eps: f64,
    pub noise_variance: f64,
    pub manifest: RunManifest,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(FpcaError::Dimension(format!("expected rows of length {ncols}")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl FitDocument {
    pub fn new(fit: &FpcaFit, curve_ids: Vec<String>, manifest: RunManifest) -> Result<Self> {
        if curve_ids.len() != fit.scores.nrows() {
            return Err(FpcaError::Dimension(format!(
                "{} curve ids for {} score rows",
                curve_ids.len(),
                fit.scores.nrows()
            )));
        }
        Ok(Self {
            num_curves: fit.scores.nrows(),
            num_eigen: fit.num_eigen(),
            grid_size: fit.grid.len(),
            curve_ids,
            t_g: fit.grid.clone(),
            mean: fit.mean.iter().copied().collect(),
            eigenfunctions: fit.eigenfunctions.column_iter().map(|c| c.iter().copied().collect()).collect(),
            scores: rows_of(&fit.scores),
            score_covariances: fit.score_covs.iter().map(rows_of).collect(),
            eigenvalues: fit.eigenvalues.clone(),
            recip_sigsq_eps: fit.recip_sigsq_eps,
            noise_variance: fit.noise_variance(),
            manifest,
        })
    }

    pub fn to_fit(&self) -> Result<FpcaFit> {
        let (n_g, l, n) = (self.grid_size, self.num_eigen, self.num_curves);
        if self.t_g.len() != n_g
            || self.mean.len() != n_g
            || self.eigenfunctions.len() != l
            || self.eigenfunctions.iter().any(|c| c.len() != n_g)
            || self.scores.len() != n
            || self.score_covariances.len() != n
            || self.eigenvalues.len() != l
        {
            return Err(FpcaError::Dimension("fit document arrays disagree with its declared shapes".into()));
        }
        Ok(FpcaFit {
            grid: self.t_g.clone(),
            mean: DVector::from_column_slice(&self.mean),
            eigenfunctions: DMatrix::from_fn(n_g, l, |g, j| self.eigenfunctions[j][g]),
            scores: matrix_from_rows(&self.scores, l)?,
            score_covs: self
                .score_covariances
                .iter()
                .map(|c| matrix_from_rows(c, l))
                .collect::<Result<_>>()?,
            eigenvalues: self.eigenvalues.clone(),
            recip_sigsq_eps: self.recip_sigsq_eps,
        })
    }
}

/// The generating functions of a simulated dataset on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub num_curves: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    /// `[2][grid_size]`
    pub eigenfunctions: Vec<Vec<f64>>,
    /// `[num_curves][2]`
    pub scores: Vec<[f64; 2]>,
    pub score_variances: [f64; 2],
    pub noise_var: f64,
}

impl TruthDocument {
    pub fn new(truth: &GroundTruth, seed: u64, grid_size: usize) -> Self {
        let grid = uniform_grid(grid_size);
        Self {
            num_curves: truth.scores.len(),
            seed,
            mean: grid.iter().map(|&t| true_mean(t)).collect(),
            eigenfunctions: (0..2).map(|l| grid.iter().map(|&t| true_eigenfunction(l, t)).collect()).collect(),
            grid,
            scores: truth.scores.clone(),
            score_variances: truth.score_variances,
            noise_var: truth.noise_var,
        }
    }
}

/// Target curves for evaluation on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
}

impl From<&TruthDocument> for Reference {
    fn from(t: &TruthDocument) -> Self {
        Self {
            grid: t.grid.clone(),
            mean: t.mean.clone(),
            eigenfunctions: t.eigenfunctions.clone(),
        }
    }
}

impl From<&FitDocument> for Reference {
    fn from(f: &FitDocument) -> Self {
        Self {
            grid: f.t_g.clone(),
            mean: f.mean.clone(),
            eigenfunctions: f.eigenfunctions.clone(),
        }
    }
}

/// Read a truth document, or a fit document to compare two fits.
pub fn read_reference(path: &Path) -> Result<Reference> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("t_g").is_some() {
        Ok(Reference::from(&serde_json::from_value::<FitDocument>(value)?))
    } else {
        Ok(Reference::from(&serde_json::from_value::<TruthDocument>(value)?))
    }
}

/// Piecewise linear interpolation of `(x, y)` at `at`; `x` increasing.
pub fn interpolate(x: &[f64], y: &[f64], at: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(FpcaError::Dimension(format!("interpolation needs matching x and y of length ≥ 2, got {} and {}", x.len(), y.len())));
    }
    at.iter()
        .map(|&t| {
            if t < x[0] || t > x[x.len() - 1] {
                return Err(FpcaError::Invalid(format!("{t} lies outside [{}, {}]", x[0], x[x.len() - 1])));
            }
            let k = x.partition_point(|&v| v <= t).clamp(1, x.len() - 1);
            let w = (t - x[k - 1]) / (x[k] - x[k - 1]);
            Ok(y[k - 1] + w * (y[k] - y[k - 1]))
        })
        .collect()
}

impl Reference {
    /// Values on `grid`, interpolating with a warning if the grids differ.
    pub fn on_grid(&self, grid: &[f64]) -> Result<Self> {
        if self.grid == grid {
            return Ok(self.clone());
        }
        warn!(
            "reference grid ({} points) differs from the fit grid ({} points); interpolating",
            self.grid.len(),
            grid.len()
        );
        Ok(Self {
            grid: grid.to_vec(),
            mean: interpolate(&self.grid, &self.mean, grid)?,
            eigenfunctions: self
                .eigenfunctions
                .iter()
                .map(|f| interpolate(&self.grid, f, grid))
                .collect::<Result<_>>()?,
        })
    }
}

/// Accuracy of a fit against a reference after sign alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ise_mean: f64,
    /// One entry per eigenfunction present in both the fit and the reference.
    pub ise_eigenfunctions: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub noise_variance: f64,
}

pub fn evaluate(fit: &FpcaFit, reference: &Reference) -> Result<Metrics> {
    let r = reference.on_grid(&fit.grid)?;
    let k = fit.num_eigen().min(r.eigenfunctions.len());
    let aligned = sign_align(fit, &r.eigenfunctions[..k])?;
    let mean: Vec<f64> = aligned.mean.iter().copied().collect();
    let ise_eigenfunctions = (0..k)
        .map(|l| {
            let est: Vec<f64> = aligned.eigenfunctions.column(l).iter().copied().collect();
            ise(&r.eigenfunctions[l], &est, &fit.grid)
        })
        .collect::<Result<_>>()?;
    Ok(Metrics {
        ise_mean: ise(&r.mean, &mean, &fit.grid)?,
        ise_eigenfunctions,
        eigenvalues: fit.eigenvalues.clone(),
        noise_variance: fit.noise_variance(),
    })
}

/// Long-format `series,t,value` rows for the mean (`mean`), each
/// eigenfunction (`psi_1`, ...) and each fitted curve (`fit_<curve id>`).
/// Times are mapped back through `rescale` when given.
pub fn write_curves<W: Write>(writer: W, fit: &FpcaFit, curve_ids: &[String], rescale: Option<&TimeRescale>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["series", "t", "value"])?;
    let times: Vec<String> = fit
        .grid
        .iter()
        .map(|&t| rescale.map_or(t, |r| r.invert(t)).to_string())
        .collect();
    let mut series = |name: &str, values: nalgebra::DVectorView<'_, f64>| -> Result<()> {
        for (t, v) in times.iter().zip(values.iter()) {
            wtr.write_record([name, t.as_str(), &v.to_string()])?;
        }
        Ok(())
    };
    series("mean", fit.mean.column(0))?;
    for l in 0..fit.num_eigen() {
        series(&format!("psi_{}", l + 1), fit.eigenfunctions.column(l))?;
    }
    let fits = fit.fitted_curves();
    for (i, id) in curve_ids.iter().enumerate() {
        series(&format!("fit_{id}"), fits.column(i))?;
    }
    wtr.flush()?;
    Ok(())
}
