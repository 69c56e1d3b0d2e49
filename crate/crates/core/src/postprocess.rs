//! From converged q-densities to orthonormal eigenfunctions, uncorrelated
//! scores and eigenvalue estimates.
//!
//! The raw fit `E{μ(t_g)} + Ψ Ξᵀ` is not identified: any invertible mixing of
//! the columns of `Ψ` can be undone in `Ξ`. The rotation below picks the
//! representative with trapezoid-orthonormal eigenfunctions and scores whose
//! sample covariance is diagonal, leaving the fitted curves unchanged.

use log::{info, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{FpcaError, Result};
use crate::expfam::GaussianMoments;
use crate::graph::{q_natural_params, NodeId};
use crate::orchestrator::{Model, VmpState, MIN_GRID_SIZE};
use crate::simulate::{trapezoid, uniform_grid};
use crate::splines::SplineBasis;

/// Moments of the optimal q-densities after fitting.
#[derive(Debug, Clone)]
pub struct RawSolution {
    pub num_eigen: usize,
    pub num_splines: usize,
    pub nu: GaussianMoments,
    pub zetas: Vec<GaussianMoments>,
    pub recip_sigsq_eps: f64,
}

impl RawSolution {
    fn block_len(&self) -> usize {
        self.num_splines + 2
    }

    /// `E(ν_μ)` for `j = 0`, `E(ν_ψj)` for `j = 1..=L`.
    pub fn nu_block(&self, j: usize) -> DVector<f64> {
        let b = self.block_len();
        self.nu.mean.rows(j * b, b).into_owned()
    }
}

pub fn extract(model: &Model, state: &VmpState) -> Result<RawSolution> {
    let graph = &model.graph;
    let nu = q_natural_params(graph, NodeId::Nu, &state.store)?
        .as_gaussian_vec()?
        .to_moments()?;
    let zetas = (0..graph.num_curves)
        .map(|i| q_natural_params(graph, NodeId::Zeta(i), &state.store)?.as_gaussian_vech()?.to_moments())
        .collect::<Result<Vec<_>>>()?;
    let recip_sigsq_eps = q_natural_params(graph, NodeId::SigmaSqEps, &state.store)?
        .as_inv_chi_sq()?
        .mean_reciprocal()?;
    Ok(RawSolution {
        num_eigen: model.config.num_eigen,
        num_splines: model.config.num_splines,
        nu,
        zetas,
        recip_sigsq_eps,
    })
}

/// Posterior means evaluated on an equidistant grid, before rotation.
#[derive(Debug, Clone)]
pub struct GridEvaluation {
    pub grid: Vec<f64>,
    /// `E{μ(t_g)} = C_g E(ν_μ)`
    pub mean: DVector<f64>,
    /// Column `l` is `C_g E(ν_ψl)`, `n_g x L`.
    pub psi: DMatrix<f64>,
    /// Row `i` is `E(ζ_i)ᵀ`, `n x L`.
    pub xi: DMatrix<f64>,
    /// `Cov(ζ_i)` for each curve.
    pub score_covs: Vec<DMatrix<f64>>,
    pub recip_sigsq_eps: f64,
}

impl GridEvaluation {
    /// `E{μ(t_g)} + Ψ Ξᵀ`, one column per curve.
    pub fn fitted_curves(&self) -> DMatrix<f64> {
        let mut fits = &self.psi * self.xi.transpose();
        for mut col in fits.column_iter_mut() {
            col += &self.mean;
        }
        fits
    }
}

pub fn evaluate_grid(raw: &RawSolution, basis: &SplineBasis, grid_size: usize) -> Result<GridEvaluation> {
    if grid_size < MIN_GRID_SIZE {
        return Err(FpcaError::Invalid(format!("grid size must be at least {MIN_GRID_SIZE}, got {grid_size}")));
    }
    if basis.num_basis() != raw.num_splines {
        return Err(FpcaError::Dimension(format!(
            "basis has {} splines, solution has {}",
            basis.num_basis(),
            raw.num_splines
        )));
    }
    let grid = uniform_grid(grid_size);
    let c = basis.design_matrix(&grid)?;
    let l = raw.num_eigen;
    let mean = &c * raw.nu_block(0);
    let mut psi = DMatrix::zeros(grid_size, l);
    for j in 0..l {
        psi.set_column(j, &(&c * raw.nu_block(j + 1)));
    }
    let n = raw.zetas.len();
    let xi = DMatrix::from_fn(n, l, |i, j| raw.zetas[i].mean[j]);
    Ok(GridEvaluation {
        grid,
        mean,
        psi,
        xi,
        score_covs: raw.zetas.iter().map(|z| z.cov.clone()).collect(),
        recip_sigsq_eps: raw.recip_sigsq_eps,
    })
}

/// The orthogonalized fit.
#[derive(Debug, Clone)]
pub struct FpcaFit {
    pub grid: Vec<f64>,
    pub mean: DVector<f64>,
    /// Column `l` is `ψ̂_l(t_g)`, `n_g x L`.
    pub eigenfunctions: DMatrix<f64>,
    /// Row `i` is `ζ̂_iᵀ`, `n x L`.
    pub scores: DMatrix<f64>,
    /// Posterior covariance of each `ζ̂_i` under the same linear map.
    pub score_covs: Vec<DMatrix<f64>>,
    /// `‖ψ̃_l‖²`, descending.
    pub eigenvalues: Vec<f64>,
    pub recip_sigsq_eps: f64,
}

impl FpcaFit {
    pub fn num_eigen(&self) -> usize {
        self.eigenfunctions.ncols()
    }

    /// `μ̂(t_g) + Σ_l ζ̂_il ψ̂_l(t_g)`, one column per curve.
    pub fn fitted_curves(&self) -> DMatrix<f64> {
        let mut fits = &self.eigenfunctions * self.scores.transpose();
        for mut col in fits.column_iter_mut() {
            col += &self.mean;
        }
        fits
    }

    /// Estimate of the noise variance, `1 / E(1/σ²_ε)`.
    pub fn noise_variance(&self) -> f64 {
        1.0 / self.recip_sigsq_eps
    }
}

/// Trapezoid quadrature weights on an arbitrary increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> DVector<f64> {
    let mut w = DVector::zeros(grid.len());
    for g in 0..grid.len().saturating_sub(1) {
        let h = grid[g + 1] - grid[g];
        w[g] += 0.5 * h;
        w[g + 1] += 0.5 * h;
    }
    w
}

/// `∫ f g` by the trapezoid rule.
pub fn inner_product(f: &[f64], g: &[f64], grid: &[f64]) -> f64 {
    let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
    trapezoid(&prod, grid)
}

/// Symmetric eigendecomposition with eigenvalues descending.
fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // stable sort keeps original index order on ties
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = DMatrix::from_columns(&order.iter().map(|&k| eig.eigenvectors.column(k)).collect::<Vec<_>>());
    (values, vectors)
}

/// Singular values of `Ψ` at or below this fraction of the largest are
/// treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// What to do when `Ψ` has fewer than `L` non-negligible singular values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    /// Return [`FpcaError::RankDeficient`].
    #[default]
    Strict,
    /// Rotate the non-degenerate components and report each remaining one
    /// with eigenvalue 0, zero scores and an eigenfunction completing the
    /// orthonormal set. This is the usual outcome when more components are
    /// fitted than the data support and the surplus ones shrink to zero.
    ZeroFill,
}

/// Inner product on grid vectors used by the singular value decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridInnerProduct {
    /// `⟨f, g⟩ = Σ w_g f_g g_g` with trapezoid weights, so the eigenfunctions
    /// are orthonormal under the same quadrature used for their norms.
    #[default]
    Trapezoid,
    /// Plain `ℓ²` on the grid values. Eigenfunctions are then `ℓ²`-orthogonal
    /// and only approximately orthonormal in `L²`; the endpoint weights leave
    /// an `O(1/n_g)` error.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OrthogonalizeOptions {
    pub rank: RankPolicy,
    pub inner: GridInnerProduct,
}

/// Rotate the grid evaluation into orthonormal eigenfunctions and
/// uncorrelated scores.
pub fn orthogonalize(eval: &GridEvaluation) -> Result<FpcaFit> {
    orthogonalize_with(eval, OrthogonalizeOptions::default())
}

pub fn orthogonalize_with(eval: &GridEvaluation, options: OrthogonalizeOptions) -> Result<FpcaFit> {
    let policy = options.rank;
    let (n_g, l) = eval.psi.shape();
    let n = eval.xi.nrows();
    if eval.xi.ncols() != l || eval.mean.len() != n_g || eval.grid.len() != n_g {
        return Err(FpcaError::Dimension("grid evaluation shapes are inconsistent".into()));
    }
    if n < 2 {
        return Err(FpcaError::Invalid("at least two curves are needed to estimate score covariance".into()));
    }

    // Thin SVD Ψ = U D Vᵀ with singular values descending and U orthonormal
    // under the chosen inner product: decompose W^½ Ψ, then U = W^-½ U_w.
    let root_w = match options.inner {
        GridInnerProduct::Trapezoid => trapezoid_weights(&eval.grid).map(f64::sqrt),
        GridInnerProduct::Euclidean => DVector::from_element(n_g, 1.0),
    };
    if root_w.iter().any(|&s| !(s > 0.0)) {
        return Err(FpcaError::Invalid("grid must be strictly increasing".into()));
    }
    let svd = (DMatrix::from_diagonal(&root_w) * &eval.psi).svd(true, true);
    let u_raw = DMatrix::from_diagonal(&root_w.map(|s| 1.0 / s)) * svd.u.unwrap();
    let vt_raw = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let d_all = DVector::from_iterator(l, order.iter().map(|&k| svd.singular_values[k]));
    let u_all = DMatrix::from_columns(&order.iter().map(|&k| u_raw.column(k)).collect::<Vec<_>>());
    let v_all = DMatrix::from_columns(&order.iter().map(|&k| vt_raw.row(k).transpose()).collect::<Vec<_>>());
    let rank = d_all.iter().filter(|&&s| s > RANK_TOL * d_all[0]).count();
    if rank < l && (policy == RankPolicy::Strict || rank == 0) {
        return Err(FpcaError::RankDeficient(format!(
            "singular values of the eigenfunction matrix: {:?}",
            d_all.as_slice()
        )));
    }
    let r = rank;
    let d = d_all.rows(0, r).into_owned();
    let u = u_all.columns(0, r).into_owned();
    let v = v_all.columns(0, r).into_owned();

    // Scores in the U basis: rows of Ξ V D.
    let dmat = DMatrix::from_diagonal(&d);
    let z = &eval.xi * &v * &dmat;
    let m = DVector::from_fn(r, |j, _| z.column(j).mean());
    let mut centered = z.clone();
    for mut row in centered.row_iter_mut() {
        row -= m.transpose();
    }
    let c_zeta = centered.transpose() * &centered / (n as f64 - 1.0);
    let (lambda, q) = sorted_eigen(&c_zeta);
    for (j, &lam) in lambda.iter().enumerate() {
        if !(lam > 0.0) {
            return Err(FpcaError::DegenerateComponent {
                component: j + 1,
                reason: format!("score covariance eigenvalue {lam}"),
            });
        }
    }
    for j in 1..r {
        if (lambda[j - 1] - lambda[j]).abs() <= 1e-12 * lambda[0] {
            warn!("score covariance eigenvalues {} and {} are tied", j, j + 1);
        }
    }

    let mean = &eval.mean + &u * &m;
    let sqrt_lam = lambda.map(f64::sqrt);
    let psi_tilde = &u * &q * DMatrix::from_diagonal(&sqrt_lam);
    let xi_tilde = centered * &q * DMatrix::from_diagonal(&sqrt_lam.map(|s| 1.0 / s));

    let w = trapezoid_weights(&eval.grid);
    let norm_of = |c: nalgebra::DVectorView<'_, f64>| c.component_mul(&c).dot(&w).sqrt();
    let norms: Vec<f64> = (0..r).map(|j| norm_of(psi_tilde.column(j))).collect();
    let mut eigenfunctions = DMatrix::zeros(n_g, l);
    let mut scores = DMatrix::zeros(n, l);
    for (j, &norm) in norms.iter().enumerate() {
        if !(norm > 0.0) {
            return Err(FpcaError::DegenerateComponent {
                component: j + 1,
                reason: "zero eigenfunction norm".into(),
            });
        }
        eigenfunctions.set_column(j, &(psi_tilde.column(j) / norm));
        scores.set_column(j, &(xi_tilde.column(j) * norm));
    }
    // Remaining left singular vectors are orthogonal to the kept ones.
    for j in r..l {
        let c = u_all.column(j);
        eigenfunctions.set_column(j, &(c / norm_of(c)));
        info!("component {} has a negligible eigenfunction and is reported with eigenvalue 0", j + 1);
    }

    // ζ̂_i = A E(ζ_i) − const, so Cov(ζ̂_i) = A Cov(ζ_i) Aᵀ.
    let a_r = DMatrix::from_diagonal(&DVector::from_iterator(r, norms.iter().zip(sqrt_lam.iter()).map(|(nrm, s)| nrm / s)))
        * q.transpose()
        * &dmat
        * v.transpose();
    let mut a = DMatrix::zeros(l, l);
    a.rows_mut(0, r).copy_from(&a_r);
    let score_covs = eval.score_covs.iter().map(|c| &a * c * a.transpose()).collect();

    let mut eigenvalues: Vec<f64> = norms.iter().map(|x| x * x).collect();
    eigenvalues.resize(l, 0.0);
    Ok(FpcaFit {
        grid: eval.grid.clone(),
        mean,
        eigenfunctions,
        scores,
        score_covs,
        eigenvalues,
        recip_sigsq_eps: eval.recip_sigsq_eps,
    })
}

/// Extract, evaluate on a grid of `model.config.grid_size` points and rotate
/// with [`RankPolicy::ZeroFill`] under the trapezoid inner product.
pub fn postprocess(model: &Model, state: &VmpState) -> Result<(GridEvaluation, FpcaFit)> {
    let raw = extract(model, state)?;
    let eval = evaluate_grid(&raw, &model.basis, model.config.grid_size)?;
    let options = OrthogonalizeOptions {
        rank: RankPolicy::ZeroFill,
        ..OrthogonalizeOptions::default()
    };
    let fit = orthogonalize_with(&eval, options)?;
    Ok((eval, fit))
}

/// Modified Gram-Schmidt under the trapezoid inner product.
pub fn gram_schmidt_oracle(columns: &DMatrix<f64>, grid: &[f64]) -> Result<DMatrix<f64>> {
    if columns.nrows() != grid.len() {
        return Err(FpcaError::Dimension(format!(
            "{} rows for a grid of {} points",
            columns.nrows(),
            grid.len()
        )));
    }
    let w = trapezoid_weights(grid);
    let ip = |a: &DVector<f64>, b: &DVector<f64>| a.component_mul(b).dot(&w);
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(columns.ncols());
    for (j, col) in columns.column_iter().enumerate() {
        let mut v = col.into_owned();
        for e in &out {
            let c = ip(&v, e);
            v -= e * c;
        }
        let norm = ip(&v, &v).sqrt();
        if norm < 1e-12 {
            return Err(FpcaError::RankDeficient(format!("column {j} depends on the previous ones")));
        }
        out.push(v / norm);
    }
    Ok(DMatrix::from_columns(&out))
}

/// Flip `(ψ̂_l, ζ̂_·l)` jointly so that `⟨ψ̂_l, reference_l⟩ > 0`. Components
/// without a reference are left untouched.
pub fn sign_align(fit: &FpcaFit, references: &[Vec<f64>]) -> Result<FpcaFit> {
    let mut out = fit.clone();
    for (l, reference) in references.iter().enumerate().take(fit.num_eigen()) {
        if reference.len() != fit.grid.len() {
            return Err(FpcaError::Dimension(format!(
                "reference {l} has {} values for {} grid points",
                reference.len(),
                fit.grid.len()
            )));
        }
        let psi: Vec<f64> = fit.eigenfunctions.column(l).iter().copied().collect();
        let ip = inner_product(&psi, reference, &fit.grid);
        let scale = inner_product(reference, reference, &fit.grid).sqrt();
        if ip.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(FpcaError::AmbiguousSign(l + 1));
        }
        if ip < 0.0 {
            out.eigenfunctions.column_mut(l).neg_mut();
            out.scores.column_mut(l).neg_mut();
            for c in &mut out.score_covs {
                c.row_mut(l).neg_mut();
                c.column_mut(l).neg_mut();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::{PI, SQRT_2};

    fn random_eval(rng: &mut ChaCha8Rng, n_g: usize, l: usize, n: usize) -> GridEvaluation {
        let grid = uniform_grid(n_g);
        let psi = DMatrix::from_fn(n_g, l, |g, j| {
            let t = grid[g];
            (j as f64 + 1.0) * (PI * (j + 1) as f64 * t).sin() + rng.sample::<f64, _>(StandardNormal) * 0.01 + t
        });
        GridEvaluation {
            mean: DVector::from_fn(n_g, |g, _| grid[g].cos()),
            psi,
            xi: DMatrix::from_fn(n, l, |_, _| rng.sample::<f64, _>(StandardNormal) + 0.3),
            score_covs: vec![DMatrix::identity(l, l) * 0.1; n],
            grid,
            recip_sigsq_eps: 2.0,
        }
    }

    fn orthonormality_error(fit: &FpcaFit) -> f64 {
        let w = trapezoid_weights(&fit.grid);
        let gram = fit.eigenfunctions.transpose() * DMatrix::from_diagonal(&w) * &fit.eigenfunctions;
        (gram - DMatrix::identity(fit.num_eigen(), fit.num_eigen())).amax()
    }

    #[test]
    fn grid_has_expected_spacing() {
        let g = uniform_grid(101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 1.0);
        assert!(g.windows(2).all(|w| (w[1] - w[0] - 0.01).abs() < 1e-15));
    }

    #[test]
    fn evaluate_grid_shapes_and_slope_column() {
        let basis = SplineBasis::new(5).unwrap();
        let (l, b) = (2, 7);
        let mut mean = DVector::zeros((l + 1) * b);
        mean[b + 1] = 1.0; // ν_ψ1 = e₂
        let raw = RawSolution {
            num_eigen: l,
            num_splines: 5,
            nu: GaussianMoments::point_mass(mean),
            zetas: vec![GaussianMoments::point_mass(DVector::zeros(l)); 4],
            recip_sigsq_eps: 1.0,
        };
        let eval = evaluate_grid(&raw, &basis, 101).unwrap();
        assert_eq!(eval.mean.len(), 101);
        assert_eq!(eval.psi.shape(), (101, 2));
        assert_eq!(eval.xi.shape(), (4, 2));
        for (g, t) in eval.grid.iter().enumerate() {
            assert!((eval.psi[(g, 0)] - t).abs() < 1e-14);
        }
        assert!(evaluate_grid(&raw, &basis, 100).is_err());
    }

    #[test]
    fn rotation_preserves_fits_and_has_required_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eval = random_eval(&mut rng, 1001, 2, 50);
        let fit = orthogonalize(&eval).unwrap();
        let before = eval.fitted_curves();
        let after = fit.fitted_curves();
        assert!((&before - &after).amax() < 1e-10 * before.amax());

        let n = fit.scores.nrows() as f64;
        let scale = fit.scores.amax();
        for j in 0..2 {
            assert!(fit.scores.column(j).sum().abs() / n <= 1e-10 * scale);
        }
        let cov = fit.scores.transpose() * &fit.scores / (n - 1.0);
        assert!(cov[(0, 1)].abs() <= 1e-10 * cov.trace());
        assert_relative_eq!(cov[(0, 0)], fit.eigenvalues[0], max_relative = 1e-10);
        assert!(fit.eigenvalues[0] > fit.eigenvalues[1] && fit.eigenvalues[1] > 0.0);
        assert!(orthonormality_error(&fit) < 1e-12);
    }

    #[test]
    fn euclidean_inner_product_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eval = random_eval(&mut rng, 1001, 2, 50);
        let options = OrthogonalizeOptions {
            inner: GridInnerProduct::Euclidean,
            ..OrthogonalizeOptions::default()
        };
        let fit = orthogonalize_with(&eval, options).unwrap();
        assert!((eval.fitted_curves() - fit.fitted_curves()).amax() < 1e-10 * eval.fitted_curves().amax());
        // quadrature-limited in L², exact in ℓ² on the grid
        assert!(orthonormality_error(&fit) < 1e-3);
        let w = trapezoid_weights(&fit.grid);
        for j in 0..2 {
            let c = fit.eigenfunctions.column(j);
            assert!((c.component_mul(&c).dot(&w) - 1.0).abs() < 1e-12);
        }
        let g = fit.eigenfunctions.transpose() * &fit.eigenfunctions;
        assert!(g[(0, 1)].abs() < 1e-10 * g[(0, 0)]);

        // the two variants span the same space
        let t = orthogonalize(&eval).unwrap();
        let coef = fit.eigenfunctions.clone().svd(true, true).solve(&t.eigenfunctions, 1e-14).unwrap();
        assert!((&fit.eigenfunctions * coef - &t.eigenfunctions).amax() < 1e-9);
    }

    #[test]
    fn score_covariance_transform_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eval = random_eval(&mut rng, 201, 2, 20);
        let fit = orthogonalize(&eval).unwrap();
        let cov_in = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.2]);
        let mut eval2 = eval.clone();
        eval2.score_covs = vec![cov_in.clone(); 20];
        let fit2 = orthogonalize(&eval2).unwrap();
        // Ψ = Ψ̂ A exactly; recover A by least squares
        let a = fit.eigenfunctions.clone().svd(true, true).solve(&eval.psi, 1e-14).unwrap();
        let expected = &a * cov_in * a.transpose();
        assert!((&fit2.score_covs[0] - expected).amax() < 1e-6);
    }

    #[test]
    fn single_component_fixed_point() {
        let grid = uniform_grid(1001);
        let psi = DMatrix::from_fn(1001, 1, |g, _| SQRT_2 * (2.0 * PI * grid[g]).sin());
        let xi = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 2.0, -2.0]);
        let v = xi.iter().map(|x| x * x).sum::<f64>() / 3.0;
        let eval = GridEvaluation {
            grid: grid.clone(),
            mean: DVector::zeros(1001),
            psi: psi.clone(),
            xi,
            score_covs: vec![DMatrix::identity(1, 1); 4],
            recip_sigsq_eps: 1.0,
        };
        let fit = orthogonalize(&eval).unwrap();
        let sign = fit.eigenfunctions[(250, 0)].signum();
        assert!((fit.eigenfunctions.column(0) * sign - psi.column(0)).amax() < 1e-6);
        assert_relative_eq!(fit.eigenvalues[0], v, max_relative = 1e-4);
    }

    #[test]
    fn rank_deficient_and_degenerate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut eval = random_eval(&mut rng, 201, 2, 10);
        let col = eval.psi.column(0).into_owned();
        eval.psi.set_column(1, &(col * 2.0));
        assert!(matches!(orthogonalize(&eval), Err(FpcaError::RankDeficient(_))));

        // zero scores: zero sample covariance
        let mut eval = random_eval(&mut rng, 201, 2, 10);
        eval.xi = DMatrix::zeros(10, 2);
        assert!(matches!(
            orthogonalize(&eval),
            Err(FpcaError::DegenerateComponent { component: 1, .. })
        ));
    }

    #[test]
    fn zero_fill_reports_pruned_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut eval = random_eval(&mut rng, 1001, 3, 40);
        eval.psi.column_mut(2).fill(0.0);
        assert!(matches!(orthogonalize(&eval), Err(FpcaError::RankDeficient(_))));
        let zero_fill = OrthogonalizeOptions {
            rank: RankPolicy::ZeroFill,
            ..OrthogonalizeOptions::default()
        };
        let fit = orthogonalize_with(&eval, zero_fill).unwrap();
        assert_eq!(fit.eigenvalues[2], 0.0);
        assert!(fit.eigenvalues[0] > fit.eigenvalues[1] && fit.eigenvalues[1] > 0.0);
        assert!(fit.scores.column(2).iter().all(|x| *x == 0.0));
        assert!((eval.fitted_curves() - fit.fitted_curves()).amax() < 1e-10 * eval.fitted_curves().amax());
        assert!(orthonormality_error(&fit) < 1e-12);
        assert!(fit.score_covs[0].row(2).iter().all(|x| *x == 0.0));

        eval.psi.fill(0.0);
        assert!(orthogonalize_with(&eval, zero_fill).is_err());
    }

    #[test]
    fn fitted_curves_examples() {
        let grid = uniform_grid(101);
        let mean = DVector::from_fn(101, |g, _| grid[g]);
        let psi = DMatrix::from_fn(101, 1, |g, _| grid[g] * grid[g]);
        let mut fit = FpcaFit {
            grid,
            mean: mean.clone(),
            eigenfunctions: psi.clone(),
            scores: DMatrix::zeros(3, 1),
            score_covs: vec![],
            eigenvalues: vec![1.0],
            recip_sigsq_eps: 1.0,
        };
        let f = fit.fitted_curves();
        for c in f.column_iter() {
            assert_eq!(c, mean);
        }
        fit.scores = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(fit.fitted_curves().column(0), &mean + psi.column(0));
    }

    #[test]
    fn gram_schmidt_examples() {
        let grid = uniform_grid(1001);
        let s = DMatrix::from_fn(1001, 2, |g, j| {
            let t = 2.0 * PI * grid[g];
            if j == 0 { t.sin() } else { t.cos() }
        });
        let out = gram_schmidt_oracle(&s, &grid).unwrap();
        assert!((out.column(0) - s.column(0) * SQRT_2).amax() < 1e-3);
        assert!((out.column(1) - s.column(1) * SQRT_2).amax() < 1e-3);
        let again = gram_schmidt_oracle(&out, &grid).unwrap();
        assert!((again - &out).amax() < 1e-10);

        // span preserved: least-squares residual of the originals
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(1001, 3, |g, j| grid[g].powi(j as i32) + 0.1 * rng.sample::<f64, _>(StandardNormal));
        let q = gram_schmidt_oracle(&x, &grid).unwrap();
        let coef = q.clone().svd(true, true).solve(&x, 1e-14).unwrap();
        assert!((&q * coef - &x).amax() < 1e-10);

        let dep = DMatrix::from_fn(1001, 2, |g, _| grid[g]);
        assert!(gram_schmidt_oracle(&dep, &grid).is_err());
    }

    #[test]
    fn gram_schmidt_matches_svd_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eval = random_eval(&mut rng, 201, 2, 30);
        let gs = gram_schmidt_oracle(&eval.psi, &eval.grid).unwrap();
        let u = eval.psi.clone().svd(true, false).u.unwrap();
        // principal angles via singular values of Q_gsᵀ U after ℓ²-orthonormalizing Q_gs
        let q = gs.clone().qr().q();
        let s = (q.transpose() * u).singular_values();
        assert!(s.iter().all(|c| (1.0 - c).abs() < 1e-8));
    }

    #[test]
    fn sign_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let eval = random_eval(&mut rng, 201, 2, 30);
        let fit = orthogonalize(&eval).unwrap();
        let own: Vec<Vec<f64>> = (0..2).map(|j| fit.eigenfunctions.column(j).iter().copied().collect()).collect();
        let same = sign_align(&fit, &own).unwrap();
        assert_eq!(same.eigenfunctions, fit.eigenfunctions);

        let neg: Vec<Vec<f64>> = own.iter().map(|c| c.iter().map(|x| -x).collect()).collect();
        let flipped = sign_align(&fit, &neg).unwrap();
        assert_eq!(flipped.eigenfunctions, -&fit.eigenfunctions);
        assert!((flipped.fitted_curves() - fit.fitted_curves()).amax() < 1e-12);
        assert_eq!(flipped.score_covs[0][(0, 1)], fit.score_covs[0][(0, 1)]);

        let zero = vec![vec![0.0; 201]];
        assert!(matches!(sign_align(&fit, &zero), Err(FpcaError::AmbiguousSign(1))));
    }
}
