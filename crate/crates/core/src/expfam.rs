//! Reshaping operators and exponential-family natural parameters.
//!
//! Every message on the factor graph is a natural-parameter vector in one of
//! three families:
//!
//! * multivariate normal with sufficient statistic `(x, vec(x xᵀ))`,
//! * multivariate normal with sufficient statistic `(x, vech(x xᵀ))`,
//! * inverse-χ² with sufficient statistic `(log x, 1/x)`.
//!
//! Messages combine by adding natural parameters, so the types here only need
//! addition and the inverse mappings back to means, covariances and the
//! expectations the fragments consume.

use std::ops::Add;

use nalgebra::{DMatrix, DVector};

use crate::error::{FpcaError, Result};

/// Smallest admissible ratio between the extreme eigenvalues of a precision
/// matrix before it is treated as degenerate.
pub const MIN_EIGEN_RATIO: f64 = 1e-10;

/// Column-major concatenation of a matrix.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`]: reshape a vector of length `rows * cols` column by column.
pub fn vec_inv(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(FpcaError::Dimension(format!(
            "cannot reshape vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Column-wise concatenation of the lower triangle (diagonal included).
pub fn vech(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !m.is_square() {
        return Err(FpcaError::Dimension(format!(
            "vech needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in j..d {
            out.push(m[(i, j)]);
        }
    }
    Ok(DVector::from_vec(out))
}

/// Rebuild the symmetric matrix whose half-vectorization is `v`.
pub fn vech_inv(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = vech_order(v.len())?;
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(m)
}

/// Recover `d` from a half-vectorized length `d(d+1)/2`.
pub fn vech_order(len: usize) -> Result<usize> {
    let d = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    if d * (d + 1) / 2 == len {
        Ok(d)
    } else {
        Err(FpcaError::Dimension(format!(
            "{len} is not a triangular number"
        )))
    }
}

fn square_order(len: usize) -> Result<usize> {
    let d = (len as f64).sqrt().round() as usize;
    if d * d == len {
        Ok(d)
    } else {
        Err(FpcaError::Dimension(format!("{len} is not a perfect square")))
    }
}

/// Position of entry `(i, j)`, `i >= j`, inside `vech` of a `d x d` matrix.
fn vech_index(d: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j);
    j * d - j * (j + 1) / 2 + i
}

/// The duplication matrix `D_d` (`d² x d(d+1)/2`), with `D_d vech(A) = vec(A)`
/// for symmetric `A`.
pub fn duplication_matrix(d: usize) -> DMatrix<f64> {
    let mut dup = DMatrix::zeros(d * d, d * (d + 1) / 2);
    for j in 0..d {
        for i in 0..d {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            dup[(j * d + i, vech_index(d, r, c))] = 1.0;
        }
    }
    dup
}

/// Moore-Penrose inverse `D_d⁺ = (D_dᵀ D_d)⁻¹ D_dᵀ`.
///
/// `D_dᵀ D_d` is diagonal (1 for diagonal entries, 2 for off-diagonal ones) so
/// the inverse is written down directly.
pub fn duplication_pinv(d: usize) -> DMatrix<f64> {
    let mut pinv = DMatrix::zeros(d * (d + 1) / 2, d * d);
    for j in 0..d {
        for i in 0..d {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            pinv[(vech_index(d, r, c), j * d + i)] = if r == c { 1.0 } else { 0.5 };
        }
    }
    pinv
}

/// `D_dᵀ vec(M)` without forming `D_d`.
pub fn dup_transpose_vec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in j..d {
            out.push(if i == j { m[(i, i)] } else { m[(i, j)] + m[(j, i)] });
        }
    }
    DVector::from_vec(out)
}

/// `vec⁻¹(D_d⁺ᵀ v)` without forming `D_d⁺`.
pub fn dup_pinv_transpose_unvec(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = vech_order(v.len())?;
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                m[(i, j)] = 0.5 * v[k];
                m[(j, i)] = 0.5 * v[k];
            }
            k += 1;
        }
    }
    Ok(m)
}

/// `½(M + Mᵀ)`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Invert a symmetric positive-definite matrix, refusing near-singular input.
///
/// The input is symmetrized first. Degeneracy means a non-positive smallest
/// eigenvalue or one below [`MIN_EIGEN_RATIO`] times the largest.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(FpcaError::Dimension(format!(
            "cannot invert {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = symmetrize(m);
    if sym.iter().any(|x| !x.is_finite()) {
        return Err(FpcaError::Degenerate("non-finite matrix entries".into()));
    }
    let eig = sym.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(min > 0.0) || min < MIN_EIGEN_RATIO * max {
        return Err(FpcaError::Degenerate(format!(
            "matrix is not safely positive definite (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    let chol = sym
        .cholesky()
        .ok_or_else(|| FpcaError::Degenerate("Cholesky factorization failed".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Mean vector and covariance matrix of a multivariate normal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(FpcaError::Dimension(format!(
                "mean of length {} with {}x{} covariance",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self { mean, cov })
    }

    /// A point mass at `mean`.
    pub fn point_mass(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `E(x xᵀ) = Cov(x) + E(x) E(x)ᵀ`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.cov + &self.mean * self.mean.transpose()
    }
}

/// Multivariate normal natural parameters, `vec` basis:
/// `eta1 = Σ⁻¹μ`, `eta2 = −½ vec(Σ⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVecParams {
    pub eta1: DVector<f64>,
    pub eta2: DVector<f64>,
}

impl GaussianVecParams {
    pub fn new(eta1: DVector<f64>, eta2: DVector<f64>) -> Result<Self> {
        if eta2.len() != eta1.len() * eta1.len() {
            return Err(FpcaError::Dimension(format!(
                "vec-based eta2 has length {}, expected {}",
                eta2.len(),
                eta1.len() * eta1.len()
            )));
        }
        Ok(Self { eta1, eta2 })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            eta1: DVector::zeros(d),
            eta2: DVector::zeros(d * d),
        }
    }

    /// Build from a precision matrix and the precision-weighted mean `Σ⁻¹μ`.
    pub fn from_precision(shift: DVector<f64>, precision: &DMatrix<f64>) -> Result<Self> {
        Self::new(shift, vec(precision) * -0.5)
    }

    pub fn from_moments(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        GaussianMoments::new(mean.clone(), cov.clone())?;
        let precision = spd_inverse(cov)?;
        Self::from_precision(&precision * mean, &precision)
    }

    pub fn dim(&self) -> usize {
        self.eta1.len()
    }

    /// `−2 vec⁻¹(eta2)`, symmetrized.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        Ok(symmetrize(&(vec_inv(&self.eta2, d, d)? * -2.0)))
    }

    /// `Σ = −½ {vec⁻¹(eta2)}⁻¹`, `μ = Σ eta1`.
    pub fn to_moments(&self) -> Result<GaussianMoments> {
        square_order(self.eta2.len())?;
        let cov = spd_inverse(&self.precision()?)?;
        let mean = &cov * &self.eta1;
        Ok(GaussianMoments { mean, cov })
    }

    /// Re-express in the `vech` basis: `eta2_vech = D_dᵀ eta2_vec`.
    pub fn to_vech(&self) -> Result<GaussianVechParams> {
        let d = self.dim();
        let m = symmetrize(&vec_inv(&self.eta2, d, d)?);
        GaussianVechParams::new(self.eta1.clone(), dup_transpose_vec(&m))
    }
}

/// Multivariate normal natural parameters, `vech` basis:
/// `eta1 = Σ⁻¹μ`, `eta2 = −½ D_dᵀ vec(Σ⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVechParams {
    pub eta1: DVector<f64>,
    pub eta2: DVector<f64>,
}

impl GaussianVechParams {
    pub fn new(eta1: DVector<f64>, eta2: DVector<f64>) -> Result<Self> {
        let d = eta1.len();
        if eta2.len() != d * (d + 1) / 2 {
            return Err(FpcaError::Dimension(format!(
                "vech-based eta2 has length {}, expected {}",
                eta2.len(),
                d * (d + 1) / 2
            )));
        }
        Ok(Self { eta1, eta2 })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            eta1: DVector::zeros(d),
            eta2: DVector::zeros(d * (d + 1) / 2),
        }
    }

    pub fn from_precision(shift: DVector<f64>, precision: &DMatrix<f64>) -> Result<Self> {
        Self::new(shift, dup_transpose_vec(precision) * -0.5)
    }

    pub fn from_moments(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        GaussianMoments::new(mean.clone(), cov.clone())?;
        let precision = spd_inverse(cov)?;
        Self::from_precision(&precision * mean, &precision)
    }

    pub fn dim(&self) -> usize {
        self.eta1.len()
    }

    /// `−2 vec⁻¹(D_d⁺ᵀ eta2)`.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        Ok(dup_pinv_transpose_unvec(&self.eta2)? * -2.0)
    }

    pub fn to_moments(&self) -> Result<GaussianMoments> {
        let cov = spd_inverse(&self.precision()?)?;
        let mean = &cov * &self.eta1;
        Ok(GaussianMoments { mean, cov })
    }

    /// Re-express in the `vec` basis: `eta2_vec = D_d⁺ᵀ eta2_vech`.
    pub fn to_vec(&self) -> Result<GaussianVecParams> {
        let m = dup_pinv_transpose_unvec(&self.eta2)?;
        GaussianVecParams::new(self.eta1.clone(), vec(&m))
    }
}

/// Inverse-χ² natural parameters: `eta1 = −(ξ+2)/2`, `eta2 = −λ/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvChiSqParams {
    pub eta1: f64,
    pub eta2: f64,
}

impl InvChiSqParams {
    pub fn new(eta1: f64, eta2: f64) -> Self {
        Self { eta1, eta2 }
    }

    pub fn from_shape_scale(shape: f64, scale: f64) -> Self {
        Self {
            eta1: -0.5 * (shape + 2.0),
            eta2: -0.5 * scale,
        }
    }

    /// A proper density needs `eta1 < −1` and `eta2 < 0`.
    pub fn is_proper(&self) -> bool {
        self.eta1 < -1.0 && self.eta2 < 0.0 && self.eta1.is_finite() && self.eta2.is_finite()
    }

    /// `(ξ, λ) = (−2 eta1 − 2, −2 eta2)`; only defined for proper params.
    pub fn to_shape_scale(&self) -> Result<(f64, f64)> {
        if !self.is_proper() {
            return Err(FpcaError::Degenerate(format!(
                "improper inverse-chi-squared parameters ({}, {})",
                self.eta1, self.eta2
            )));
        }
        Ok((-2.0 * self.eta1 - 2.0, -2.0 * self.eta2))
    }

    /// `E(1/x) = (eta1 + 1)/eta2`, equal to `ξ/λ`.
    pub fn mean_reciprocal(&self) -> Result<f64> {
        if self.eta2 == 0.0 || !self.eta2.is_finite() || !self.eta1.is_finite() {
            return Err(FpcaError::Degenerate(format!(
                "E(1/x) undefined for inverse-chi-squared parameters ({}, {})",
                self.eta1, self.eta2
            )));
        }
        Ok((self.eta1 + 1.0) / self.eta2)
    }
}

impl Add for InvChiSqParams {
    type Output = InvChiSqParams;

    fn add(self, rhs: Self) -> Self {
        InvChiSqParams::new(self.eta1 + rhs.eta1, self.eta2 + rhs.eta2)
    }
}

/// Which sufficient-statistic basis a natural parameter vector uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    GaussianVec,
    GaussianVech,
    InvChiSq,
}

/// Payload of a message: a natural-parameter vector tagged with its family.
#[derive(Debug, Clone, PartialEq)]
pub enum NaturalParams {
    GaussianVec(GaussianVecParams),
    GaussianVech(GaussianVechParams),
    InvChiSq(InvChiSqParams),
}

impl NaturalParams {
    pub fn basis(&self) -> Basis {
        match self {
            NaturalParams::GaussianVec(_) => Basis::GaussianVec,
            NaturalParams::GaussianVech(_) => Basis::GaussianVech,
            NaturalParams::InvChiSq(_) => Basis::InvChiSq,
        }
    }

    /// Zero vector of the same family and dimension.
    pub fn zeros_like(&self) -> NaturalParams {
        match self {
            NaturalParams::GaussianVec(p) => NaturalParams::GaussianVec(GaussianVecParams::zeros(p.dim())),
            NaturalParams::GaussianVech(p) => {
                NaturalParams::GaussianVech(GaussianVechParams::zeros(p.dim()))
            }
            NaturalParams::InvChiSq(_) => NaturalParams::InvChiSq(InvChiSqParams::new(0.0, 0.0)),
        }
    }

    /// Component-wise sum; both operands must share a family and dimension.
    pub fn try_add(&self, other: &NaturalParams) -> Result<NaturalParams> {
        match (self, other) {
            (NaturalParams::GaussianVec(a), NaturalParams::GaussianVec(b)) if a.dim() == b.dim() => {
                Ok(NaturalParams::GaussianVec(GaussianVecParams {
                    eta1: &a.eta1 + &b.eta1,
                    eta2: &a.eta2 + &b.eta2,
                }))
            }
            (NaturalParams::GaussianVech(a), NaturalParams::GaussianVech(b)) if a.dim() == b.dim() => {
                Ok(NaturalParams::GaussianVech(GaussianVechParams {
                    eta1: &a.eta1 + &b.eta1,
                    eta2: &a.eta2 + &b.eta2,
                }))
            }
            (NaturalParams::InvChiSq(a), NaturalParams::InvChiSq(b)) => {
                Ok(NaturalParams::InvChiSq(*a + *b))
            }
            _ => Err(FpcaError::BasisMismatch(format!(
                "cannot add {:?}({}) and {:?}({})",
                self.basis(),
                self.len(),
                other.basis(),
                other.len()
            ))),
        }
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        match self {
            NaturalParams::GaussianVec(p) => p.eta1.len() + p.eta2.len(),
            NaturalParams::GaussianVech(p) => p.eta1.len() + p.eta2.len(),
            NaturalParams::InvChiSq(_) => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened `(eta1, eta2)`.
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            NaturalParams::GaussianVec(p) => p.eta1.iter().chain(p.eta2.iter()).copied().collect(),
            NaturalParams::GaussianVech(p) => p.eta1.iter().chain(p.eta2.iter()).copied().collect(),
            NaturalParams::InvChiSq(p) => vec![p.eta1, p.eta2],
        }
    }

    pub fn as_gaussian_vec(&self) -> Result<&GaussianVecParams> {
        match self {
            NaturalParams::GaussianVec(p) => Ok(p),
            other => Err(FpcaError::BasisMismatch(format!(
                "expected vec-based Gaussian, found {:?}",
                other.basis()
            ))),
        }
    }

    pub fn as_gaussian_vech(&self) -> Result<&GaussianVechParams> {
        match self {
            NaturalParams::GaussianVech(p) => Ok(p),
            other => Err(FpcaError::BasisMismatch(format!(
                "expected vech-based Gaussian, found {:?}",
                other.basis()
            ))),
        }
    }

    pub fn as_inv_chi_sq(&self) -> Result<InvChiSqParams> {
        match self {
            NaturalParams::InvChiSq(p) => Ok(*p),
            other => Err(FpcaError::BasisMismatch(format!(
                "expected inverse-chi-squared, found {:?}",
                other.basis()
            ))),
        }
    }
}
