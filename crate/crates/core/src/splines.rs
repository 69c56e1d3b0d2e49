//! O'Sullivan penalized splines in mixed-model form.
//!
//! Cubic B-splines on `K - 2` equally spaced interior knots in `(0, 1)` give
//! `K + 2` basis functions. The roughness penalty `Ω_jk = ∫ B_j'' B_k''` has a
//! two-dimensional null space (the linear functions), so its `K` positive
//! eigenpairs define the transform
//!
//! ```text
//! z(t) = B(t)ᵀ U diag(d)^{-1/2}
//! ```
//!
//! under which `∫ f''² = uᵀu` for `f = z(t)ᵀu`. The linear part lives in the
//! `(1, t)` columns of the design matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{FpcaError, Result};

const DEGREE: usize = 3;

/// Interior knots closer than this are refused.
pub const MIN_KNOT_SPACING: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SplineBasis {
    interior_knots: Vec<f64>,
    /// Full knot sequence with the boundary knots repeated `DEGREE + 1` times.
    knots: Vec<f64>,
    /// `(K + 2) x K` map from B-spline values to mixed-model columns.
    transform: DMatrix<f64>,
    num_basis: usize,
}

impl SplineBasis {
    /// Build the `K`-column basis on `[0, 1]`.
    pub fn new(num_basis: usize) -> Result<Self> {
        if num_basis < 3 {
            return Err(FpcaError::Invalid(format!(
                "spline basis needs K >= 3, got {num_basis}"
            )));
        }
        let num_interior = num_basis - 2;
        let spacing = 1.0 / (num_interior + 1) as f64;
        if spacing < MIN_KNOT_SPACING {
            return Err(FpcaError::Invalid(format!(
                "K = {num_basis} gives knot spacing {spacing:e}, below {MIN_KNOT_SPACING:e}"
            )));
        }
        let interior_knots: Vec<f64> = (1..=num_interior).map(|k| k as f64 * spacing).collect();
        let mut knots = vec![0.0; DEGREE + 1];
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat_n(1.0, DEGREE + 1));

        let mut basis = Self {
            interior_knots,
            knots,
            transform: DMatrix::zeros(0, 0),
            num_basis,
        };
        let omega = basis.penalty_matrix();
        let eig = omega.symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let nb = basis.num_bsplines();
        let mut transform = DMatrix::zeros(nb, num_basis);
        for (col, &idx) in order.iter().take(num_basis).enumerate() {
            let value = eig.eigenvalues[idx];
            if value <= 0.0 {
                return Err(FpcaError::Invalid(format!(
                    "penalty matrix has only {col} positive eigenvalues"
                )));
            }
            let scale = value.sqrt().recip();
            for r in 0..nb {
                transform[(r, col)] = eig.eigenvectors[(r, idx)] * scale;
            }
        }
        basis.transform = transform;
        Ok(basis)
    }

    /// Number of mixed-model spline columns `K`.
    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    fn num_bsplines(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    /// Index `j` of the knot span `[knots[j], knots[j+1])` containing `x`; the
    /// right boundary belongs to the last non-empty span.
    fn span(&self, x: f64) -> usize {
        let nb = self.num_bsplines();
        if x >= self.knots[nb] {
            return nb - 1;
        }
        let mut j = DEGREE;
        while j < nb - 1 && x >= self.knots[j + 1] {
            j += 1;
        }
        j
    }

    /// `deriv`-th derivative of every cubic B-spline at `x`.
    fn bspline_derivs(&self, x: f64, deriv: usize) -> DVector<f64> {
        let t = &self.knots;
        let nb = self.num_bsplines();
        let span = self.span(x);
        // table[p][i] = B_{i,p}(x), degree-0 functions indicate the span.
        let mut table = vec![vec![0.0; t.len() - 1]; DEGREE + 1];
        table[0][span] = 1.0;
        for p in 1..=DEGREE {
            for i in 0..t.len() - 1 - p {
                let mut v = 0.0;
                let left = t[i + p] - t[i];
                if left > 0.0 {
                    v += (x - t[i]) / left * table[p - 1][i];
                }
                let right = t[i + p + 1] - t[i + 1];
                if right > 0.0 {
                    v += (t[i + p + 1] - x) / right * table[p - 1][i + 1];
                }
                table[p][i] = v;
            }
        }
        DVector::from_fn(nb, |i, _| derivative(t, &table, DEGREE, i, deriv))
    }

    /// `Ω_jk = ∫₀¹ B_j''(t) B_k''(t) dt`. The integrand is piecewise quadratic,
    /// so Simpson's rule on each knot span is exact.
    fn penalty_matrix(&self) -> DMatrix<f64> {
        let nb = self.num_bsplines();
        let mut omega = DMatrix::zeros(nb, nb);
        let mut breaks = vec![0.0];
        breaks.extend_from_slice(&self.interior_knots);
        breaks.push(1.0);
        const SUB: usize = 4;
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let h = (b - a) / SUB as f64;
            for s in 0..=SUB {
                let weight = if s == 0 || s == SUB {
                    1.0
                } else if s % 2 == 1 {
                    4.0
                } else {
                    2.0
                } * h
                    / 3.0;
                // Evaluate just inside the span so that the correct polynomial
                // piece is used at span ends.
                let x = (a + s as f64 * h).clamp(a + 1e-14, b - 1e-14);
                let d2 = self.bspline_derivs(x, 2);
                omega += &d2 * d2.transpose() * weight;
            }
        }
        omega
    }

    /// Values `z_1(t), …, z_K(t)`.
    pub fn evaluate(&self, t: f64) -> DVector<f64> {
        self.transform.transpose() * self.bspline_derivs(t, 0)
    }

    /// Second derivatives `z_1''(t), …, z_K''(t)`.
    pub fn evaluate_second_derivative(&self, t: f64) -> DVector<f64> {
        self.transform.transpose() * self.bspline_derivs(t, 2)
    }

    /// `C = [1, t, z_1(t), …, z_K(t)]`, one row per time point.
    pub fn design_matrix(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let k = self.num_basis;
        let mut c = DMatrix::zeros(times.len(), k + 2);
        for (row, &t) in times.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(FpcaError::Invalid(format!(
                    "time {t} lies outside [0, 1]"
                )));
            }
            c[(row, 0)] = 1.0;
            c[(row, 1)] = t;
            let z = self.evaluate(t);
            for j in 0..k {
                c[(row, j + 2)] = z[j];
            }
        }
        Ok(c)
    }
}

fn derivative(t: &[f64], table: &[Vec<f64>], p: usize, i: usize, m: usize) -> f64 {
    if m == 0 {
        return table[p][i];
    }
    if p == 0 {
        return 0.0;
    }
    let mut v = 0.0;
    let left = t[i + p] - t[i];
    if left > 0.0 {
        v += derivative(t, table, p - 1, i, m - 1) / left;
    }
    let right = t[i + p + 1] - t[i + 1];
    if right > 0.0 {
        v -= derivative(t, table, p - 1, i + 1, m - 1) / right;
    }
    p as f64 * v
}
