//! Synthetic curves from a two-component Karhunen-Loève model and the
//! integrated squared error metric.
//!
//! ```text
//! μ(t) = 3 sin(πt)     ψ₁(t) = √2 sin(2πt)     ψ₂(t) = √2 cos(2πt)
//! ζ_i ~ N(0, diag(1, 0.25))     y_ij = μ(t_ij) + Σ_l ζ_il ψ_l(t_ij) + ε_ij
//! ```

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Curve, FunctionalDataset};
use crate::error::{FpcaError, Result};

pub fn true_mean(t: f64) -> f64 {
    3.0 * (PI * t).sin()
}

pub fn true_eigenfunction(l: usize, t: f64) -> f64 {
    match l {
        0 => SQRT_2 * (2.0 * PI * t).sin(),
        1 => SQRT_2 * (2.0 * PI * t).cos(),
        _ => panic!("the simulation model has two eigenfunctions"),
    }
}

/// Equidistant grid on `[0, 1]` with `n` points including both ends.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2, "grid needs at least two points");
    (0..n).map(|g| g as f64 / (n - 1) as f64).collect()
}

/// Composite trapezoid rule for `∫ f` given samples on `grid`.
pub fn trapezoid(values: &[f64], grid: &[f64]) -> f64 {
    values
        .windows(2)
        .zip(grid.windows(2))
        .map(|(v, t)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
        .sum()
}

/// Integrated squared error `∫₀¹ (f − f̂)²` by the trapezoid rule.
pub fn ise(truth: &[f64], estimate: &[f64], grid: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() || truth.len() != grid.len() {
        return Err(FpcaError::Dimension(format!(
            "ise: {} true values, {} estimates, {} grid points",
            truth.len(),
            estimate.len(),
            grid.len()
        )));
    }
    let sq: Vec<f64> = truth.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).collect();
    Ok(trapezoid(&sq, grid))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_curves: usize,
    pub min_obs: usize,
    pub max_obs: usize,
    pub noise_var: f64,
    pub score_variances: [f64; 2],
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_curves: 36,
            min_obs: 20,
            max_obs: 30,
            noise_var: 1.0,
            score_variances: [1.0, 0.25],
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn with_curves(num_curves: usize, seed: u64) -> Self {
        Self {
            num_curves,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_curves < 1 {
            return Err(FpcaError::Invalid("number of curves must be at least 1".into()));
        }
        if self.min_obs < 2 || self.max_obs > 10_000 || self.min_obs > self.max_obs {
            return Err(FpcaError::Invalid(format!(
                "observation range {}..={} must lie within 2..=10000",
                self.min_obs, self.max_obs
            )));
        }
        if !(self.noise_var > 0.0) {
            return Err(FpcaError::Invalid(format!("noise variance must be positive, got {}", self.noise_var)));
        }
        let [v1, v2] = self.score_variances;
        if !(v1 > 0.0 && v2 > 0.0 && v1 >= v2) {
            return Err(FpcaError::Invalid(format!(
                "score variances must be positive and descending, got {:?}",
                self.score_variances
            )));
        }
        Ok(())
    }
}

/// True scores used to generate a dataset, `scores[i] = (ζ_i1, ζ_i2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scores: Vec<[f64; 2]>,
    pub score_variances: [f64; 2],
    pub noise_var: f64,
}

impl GroundTruth {
    pub fn mean_on(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| true_mean(t)).collect()
    }

    pub fn eigenfunction_on(&self, l: usize, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| true_eigenfunction(l, t)).collect()
    }
}

/// Draw a dataset. Curve ids are `0..n` as strings; times are sorted.
pub fn generate(config: &SimConfig) -> Result<(FunctionalDataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sd = |v: f64| Normal::new(0.0, v.sqrt()).map_err(|e| FpcaError::Invalid(e.to_string()));
    let noise = sd(config.noise_var)?;
    let score_dists = [sd(config.score_variances[0])?, sd(config.score_variances[1])?];
    let unit = Uniform::new(0.0, 1.0).map_err(|e| FpcaError::Invalid(e.to_string()))?;

    let mut curves = Vec::with_capacity(config.num_curves);
    let mut scores = Vec::with_capacity(config.num_curves);
    for i in 0..config.num_curves {
        let n_obs = rng.random_range(config.min_obs..=config.max_obs);
        let mut times: Vec<f64> = (0..n_obs).map(|_| unit.sample(&mut rng)).collect();
        times.sort_by(f64::total_cmp);
        let zeta = [score_dists[0].sample(&mut rng), score_dists[1].sample(&mut rng)];
        let values = times
            .iter()
            .map(|&t| {
                true_mean(t) + zeta[0] * true_eigenfunction(0, t) + zeta[1] * true_eigenfunction(1, t)
                    + noise.sample(&mut rng)
            })
            .collect();
        curves.push(Curve::new(i.to_string(), times, values)?);
        scores.push(zeta);
    }
    Ok((
        FunctionalDataset::new(curves)?,
        GroundTruth {
            scores,
            score_variances: config.score_variances,
            noise_var: config.noise_var,
        },
    ))
}

/// Run `job` for every `(replicate, n)` pair in parallel. The seed of each
/// pair is `base_seed + replicate`, so a replicate shares its seed across
/// sample sizes. Results come back in `(n, replicate)` order.
pub fn run_study<T, F>(sizes: &[usize], replicates: usize, base_seed: u64, job: F) -> Vec<(usize, usize, Result<T>)>
where
    T: Send,
    F: Fn(&SimConfig) -> Result<T> + Sync,
{
    let tasks: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&n| (0..replicates).map(move |r| (n, r)))
        .collect();
    tasks
        .into_par_iter()
        .map(|(n, r)| {
            let cfg = SimConfig::with_curves(n, base_seed + r as u64);
            (n, r, job(&cfg))
        })
        .collect()
}
