//! Fragment updates for the FPCA factor graph.
//!
//! A fragment is a factor together with its neighbouring stochastic nodes.
//! Five kinds appear in the model:
//!
//! * Gaussian prior on each score vector `ζ_i`,
//! * inverse-χ² prior on each auxiliary variable (scalar inverse G-Wishart prior),
//! * `p(σ² | a)` linking each variance to its auxiliary variable
//!   (scalar iterated inverse G-Wishart),
//! * the FPC Gaussian likelihood `p(y | ν, ζ_1..ζ_n, σ²_ε)`,
//! * the FPC Gaussian penalization `p(ν | σ²_μ, σ²_ψ1..σ²_ψL)`.
//!
//! Expectations inside each update are taken with respect to the normalized
//! product of the two messages on each edge (see [`crate::graph::npbf`]).

use nalgebra::{DMatrix, DVector};

use crate::error::{FpcaError, Result};
use crate::expfam::{
    dup_transpose_vec, spd_inverse, vec, GaussianMoments, GaussianVecParams, GaussianVechParams, InvChiSqParams,
    NaturalParams,
};
use crate::graph::{GraphTag, Message};

/// Sufficient-statistic basis for a Gaussian message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaussianBasis {
    Vec,
    Vech,
}

/// Constant message emitted by a Gaussian prior fragment `N(mean, cov)`.
pub fn gaussian_prior_message(mean: &DVector<f64>, cov: &DMatrix<f64>, basis: GaussianBasis) -> Result<Message> {
    let params = match basis {
        GaussianBasis::Vec => NaturalParams::GaussianVec(GaussianVecParams::from_moments(mean, cov)?),
        GaussianBasis::Vech => NaturalParams::GaussianVech(GaussianVechParams::from_moments(mean, cov)?),
    };
    Ok(Message::new(params))
}

/// Constant message from `p(a) = Inverse-χ²(1, 1/A²)` to `a`.
pub fn igw_prior_message(scale: f64) -> Result<Message> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(FpcaError::Invalid(format!("prior scale must be positive, got {scale}")));
    }
    Ok(Message::tagged(
        NaturalParams::InvChiSq(InvChiSqParams::new(-1.5, -0.5 / (scale * scale))),
        GraphTag::Full,
    ))
}

/// Messages out of `p(σ² | a) = Inverse-χ²(1, 1/a)`.
///
/// `sigma_npbf` and `aux_npbf` are the two-directional natural parameters on
/// the `σ²` and `a` edges. Returns `(message to σ², message to a)`:
///
/// ```text
/// to σ²: (−3/2, −½ E(1/a))      to a: (−1/2, −½ E(1/σ²))
/// ```
pub fn iterated_igw_messages(sigma_npbf: InvChiSqParams, aux_npbf: InvChiSqParams) -> Result<(Message, Message)> {
    let recip_aux = aux_npbf
        .mean_reciprocal()
        .map_err(|e| FpcaError::Degenerate(format!("auxiliary edge: {e}")))?;
    let recip_sigma = sigma_npbf
        .mean_reciprocal()
        .map_err(|e| FpcaError::Degenerate(format!("variance edge: {e}")))?;
    if !(recip_aux > 0.0) || !(recip_sigma > 0.0) {
        return Err(FpcaError::Degenerate(format!(
            "non-positive reciprocal moments (E(1/a) = {recip_aux}, E(1/sigma^2) = {recip_sigma})"
        )));
    }
    let to_sigma = InvChiSqParams::new(-1.5, -0.5 * recip_aux);
    let to_aux = InvChiSqParams::new(-0.5, -0.5 * recip_sigma);
    Ok((
        Message::tagged(NaturalParams::InvChiSq(to_sigma), GraphTag::Full),
        Message::tagged(NaturalParams::InvChiSq(to_aux), GraphTag::Full),
    ))
}

/// Design matrix and response for one curve with the iteration-invariant
/// products cached.
#[derive(Debug, Clone)]
pub struct CurveData {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub ctc: DMatrix<f64>,
    pub cty: DVector<f64>,
    pub yty: f64,
}

impl CurveData {
    pub fn new(design: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(FpcaError::Dimension(format!(
                "design has {} rows but response has {} entries",
                design.nrows(),
                response.len()
            )));
        }
        let ctc = design.transpose() * &design;
        let cty = design.transpose() * &response;
        let yty = response.dot(&response);
        Ok(Self {
            design,
            response,
            ctc,
            cty,
            yty,
        })
    }

    pub fn num_obs(&self) -> usize {
        self.response.len()
    }
}

/// The FPC Gaussian likelihood fragment.
#[derive(Debug, Clone)]
pub struct LikelihoodFragment {
    pub curves: Vec<CurveData>,
    pub num_eigen: usize,
    /// `2 + K`
    pub block_len: usize,
}

/// Moments consumed by the likelihood fragment, all with respect to the
/// current q-densities.
#[derive(Debug, Clone)]
pub struct LikelihoodExpectations {
    pub recip_sigsq_eps: f64,
    /// `E(V) = [E(ν_μ), E(ν_ψ1), …, E(ν_ψL)]`, `(2+K) x (L+1)`.
    pub v_mean: DMatrix<f64>,
    /// `E(ζ̃_i) = (1, E(ζ_i)ᵀ)ᵀ`
    pub zeta_tilde_mean: Vec<DVector<f64>>,
    /// `blockdiag(0, Cov(ζ_i))`
    pub zeta_tilde_cov: Vec<DMatrix<f64>>,
    /// `E(ζ̃_i ζ̃_iᵀ)`
    pub zeta_tilde_outer: Vec<DMatrix<f64>>,
    /// `E(h_μψ,i)`, length `L`.
    pub h_mu_psi: Vec<DVector<f64>>,
    /// `E(H_ψ,i)`, `L x L`.
    pub h_psi: Vec<DMatrix<f64>>,
    /// `E(H_i)`, `(L+1) x (L+1)`.
    pub h_full: Vec<DMatrix<f64>>,
}

impl LikelihoodExpectations {
    /// `E(V_ψ)`, `(2+K) x L`.
    pub fn v_psi_mean(&self) -> DMatrix<f64> {
        let l = self.v_mean.ncols() - 1;
        self.v_mean.columns(1, l).into_owned()
    }
}

/// `Σ_ab A_ab B_ab`, i.e. `tr(A Bᵀ)`.
fn frobenius_dot(a: nalgebra::DMatrixView<'_, f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

impl LikelihoodFragment {
    pub fn new(curves: Vec<CurveData>, num_eigen: usize) -> Result<Self> {
        let Some(first) = curves.first() else {
            return Err(FpcaError::Invalid("likelihood fragment needs at least one curve".into()));
        };
        let block_len = first.design.ncols();
        if curves.iter().any(|c| c.design.ncols() != block_len) {
            return Err(FpcaError::Dimension("design matrices differ in column count".into()));
        }
        Ok(Self {
            curves,
            num_eigen,
            block_len,
        })
    }

    pub fn num_curves(&self) -> usize {
        self.curves.len()
    }

    /// Length of `ν`, `(L+1)(2+K)`.
    pub fn nu_dim(&self) -> usize {
        (self.num_eigen + 1) * self.block_len
    }

    pub fn total_obs(&self) -> usize {
        self.curves.iter().map(CurveData::num_obs).sum()
    }

    /// Compute every expectation the fragment's messages depend on.
    pub fn expectations(
        &self,
        nu: &GaussianMoments,
        zetas: &[GaussianMoments],
        recip_sigsq_eps: f64,
    ) -> Result<LikelihoodExpectations> {
        let l = self.num_eigen;
        let b = self.block_len;
        if nu.dim() != self.nu_dim() {
            return Err(FpcaError::Dimension(format!(
                "nu has dimension {}, expected {}",
                nu.dim(),
                self.nu_dim()
            )));
        }
        if zetas.len() != self.num_curves() {
            return Err(FpcaError::Dimension(format!(
                "{} score moments for {} curves",
                zetas.len(),
                self.num_curves()
            )));
        }
        let v_mean = DMatrix::from_column_slice(b, l + 1, nu.mean.as_slice());

        let mut out = LikelihoodExpectations {
            recip_sigsq_eps,
            v_mean,
            zeta_tilde_mean: Vec::with_capacity(zetas.len()),
            zeta_tilde_cov: Vec::with_capacity(zetas.len()),
            zeta_tilde_outer: Vec::with_capacity(zetas.len()),
            h_mu_psi: Vec::with_capacity(zetas.len()),
            h_psi: Vec::with_capacity(zetas.len()),
            h_full: Vec::with_capacity(zetas.len()),
        };

        for (curve, zeta) in self.curves.iter().zip(zetas) {
            if zeta.dim() != l {
                return Err(FpcaError::Dimension(format!(
                    "score vector has dimension {}, expected {l}",
                    zeta.dim()
                )));
            }
            let mut mean = DVector::zeros(l + 1);
            mean[0] = 1.0;
            mean.rows_mut(1, l).copy_from(&zeta.mean);
            let mut cov = DMatrix::zeros(l + 1, l + 1);
            cov.view_mut((1, 1), (l, l)).copy_from(&zeta.cov);
            let outer = &cov + &mean * mean.transpose();

            // E(H_i)_{jk} = tr{Cov(ν_k, ν_j) CᵀC} + E(ν_j)ᵀ CᵀC E(ν_k)
            let ctc_v = &curve.ctc * &out.v_mean;
            let mut h = out.v_mean.transpose() * &ctc_v;
            for j in 0..=l {
                for k in 0..=j {
                    let tr = frobenius_dot(nu.cov.view((k * b, j * b), (b, b)), &curve.ctc);
                    h[(j, k)] += tr;
                    if j != k {
                        h[(k, j)] += tr;
                    }
                }
            }
            let h = crate::expfam::symmetrize(&h);
            out.h_mu_psi.push(h.view((1, 0), (l, 1)).column(0).into_owned());
            out.h_psi.push(h.view((1, 1), (l, l)).into_owned());
            out.h_full.push(h);
            out.zeta_tilde_mean.push(mean);
            out.zeta_tilde_cov.push(cov);
            out.zeta_tilde_outer.push(outer);
        }
        Ok(out)
    }

    /// Natural parameters of the message to `ν` (vec basis).
    pub fn message_to_nu(&self, exp: &LikelihoodExpectations) -> Message {
        let b = self.block_len;
        let d = self.nu_dim();
        let mut eta1 = DVector::zeros(d);
        let mut prec = DMatrix::zeros(d, d);
        for (i, curve) in self.curves.iter().enumerate() {
            let zm = &exp.zeta_tilde_mean[i];
            let zo = &exp.zeta_tilde_outer[i];
            // (E(ζ̃)ᵀ ⊗ C)ᵀ y = E(ζ̃) ⊗ Cᵀy
            for j in 0..zm.len() {
                let mut seg = eta1.rows_mut(j * b, b);
                seg.axpy(zm[j], &curve.cty, 1.0);
            }
            // E(ζ̃ζ̃ᵀ) ⊗ CᵀC
            for j in 0..zo.nrows() {
                for k in 0..zo.ncols() {
                    let mut blk = prec.view_mut((j * b, k * b), (b, b));
                    blk += &curve.ctc * zo[(j, k)];
                }
            }
        }
        let r = exp.recip_sigsq_eps;
        let params = GaussianVecParams {
            eta1: eta1 * r,
            eta2: vec(&prec) * (-0.5 * r),
        };
        Message::new(NaturalParams::GaussianVec(params))
    }

    /// Natural parameters of the message to `ζ_i` (vech basis), without the
    /// degeneracy check applied by [`Self::message_to_zeta`].
    pub fn zeta_params(&self, exp: &LikelihoodExpectations, i: usize) -> GaussianVechParams {
        let r = exp.recip_sigsq_eps;
        let curve = &self.curves[i];
        let eta1 = (exp.v_psi_mean().transpose() * &curve.cty - &exp.h_mu_psi[i]) * r;
        let eta2 = dup_transpose_vec(&exp.h_psi[i]) * (-0.5 * r);
        GaussianVechParams { eta1, eta2 }
    }

    pub fn message_to_zeta(&self, exp: &LikelihoodExpectations, i: usize) -> Result<Message> {
        if i >= self.num_curves() {
            return Err(FpcaError::Invalid(format!("curve index {i} out of range")));
        }
        if !(exp.recip_sigsq_eps > 0.0) {
            return Err(FpcaError::Degenerate(format!(
                "E(1/sigma^2_eps) = {} makes the message to zeta[{i}] vanish",
                exp.recip_sigsq_eps
            )));
        }
        Ok(Message::new(NaturalParams::GaussianVech(self.zeta_params(exp, i))))
    }

    /// `E‖y_i − C_i V ζ̃_i‖²`.
    pub fn expected_sq_residual(&self, exp: &LikelihoodExpectations, i: usize) -> f64 {
        let curve = &self.curves[i];
        let zm = &exp.zeta_tilde_mean[i];
        let cross = zm.dot(&(exp.v_mean.transpose() * &curve.cty));
        let quad = (&exp.zeta_tilde_outer[i] * &exp.h_full[i]).trace();
        curve.yty - 2.0 * cross + quad
    }

    /// Message to `σ²_ε`: `(−½ Σ T_i, −½ Σ E‖y_i − C_i V ζ̃_i‖²)`, tagged full.
    pub fn message_to_sigsq_eps(&self, exp: &LikelihoodExpectations) -> Message {
        let eta1 = -0.5 * self.total_obs() as f64;
        let ssr: f64 = (0..self.num_curves()).map(|i| self.expected_sq_residual(exp, i)).sum();
        Message::tagged(NaturalParams::InvChiSq(InvChiSqParams::new(eta1, -0.5 * ssr)), GraphTag::Full)
    }
}

/// Hyperparameters of the Gaussian prior on the linear coefficients `β` of
/// the mean function and of each eigenfunction.
#[derive(Debug, Clone)]
pub struct BetaPrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl BetaPrior {
    pub fn isotropic(variance: f64) -> Self {
        Self {
            mean: DVector::zeros(2),
            cov: DMatrix::identity(2, 2) * variance,
        }
    }
}

/// The FPC Gaussian penalization fragment.
#[derive(Debug, Clone)]
pub struct PenalizationFragment {
    pub num_splines: usize,
    pub num_eigen: usize,
    /// `μ_ν` with zeros in the spline positions.
    prior_mean: DVector<f64>,
    /// Inverse of each `Σ_β` block: mean function first, then each eigenfunction.
    beta_precisions: Vec<DMatrix<f64>>,
}

/// Messages out of the penalization fragment.
#[derive(Debug, Clone)]
pub struct PenalizationMessages {
    pub to_nu: Message,
    pub to_sigsq_mu: Message,
    pub to_sigsq_psi: Vec<Message>,
}

impl PenalizationFragment {
    /// `beta_priors[0]` is for the mean function, `beta_priors[l]` for `ψ_l`.
    pub fn new(num_splines: usize, beta_priors: &[BetaPrior]) -> Result<Self> {
        if beta_priors.len() < 2 {
            return Err(FpcaError::Invalid("need beta priors for the mean and at least one eigenfunction".into()));
        }
        let num_eigen = beta_priors.len() - 1;
        let b = num_splines + 2;
        let mut prior_mean = DVector::zeros(b * (num_eigen + 1));
        let mut beta_precisions = Vec::with_capacity(beta_priors.len());
        for (j, prior) in beta_priors.iter().enumerate() {
            if prior.mean.len() != 2 || prior.cov.shape() != (2, 2) {
                return Err(FpcaError::Dimension("beta prior blocks must be 2-dimensional".into()));
            }
            prior_mean.rows_mut(j * b, 2).copy_from(&prior.mean);
            beta_precisions.push(
                spd_inverse(&prior.cov)
                    .map_err(|e| FpcaError::Invalid(format!("beta prior covariance {j}: {e}")))?,
            );
        }
        Ok(Self {
            num_splines,
            num_eigen,
            prior_mean,
            beta_precisions,
        })
    }

    fn block_len(&self) -> usize {
        self.num_splines + 2
    }

    /// `E(Σ_ν⁻¹) = blockdiag{[Σ_βμ⁻¹, E(1/σ²_μ) I_K], [Σ_βψl⁻¹, E(1/σ²_ψl) I_K]}`.
    pub fn expected_prior_precision(&self, recip_mu: f64, recip_psi: &[f64]) -> Result<DMatrix<f64>> {
        if recip_psi.len() != self.num_eigen {
            return Err(FpcaError::Dimension(format!(
                "{} eigenfunction variances for L = {}",
                recip_psi.len(),
                self.num_eigen
            )));
        }
        let b = self.block_len();
        let k = self.num_splines;
        let d = b * (self.num_eigen + 1);
        let mut prec = DMatrix::zeros(d, d);
        for (j, recip) in std::iter::once(recip_mu).chain(recip_psi.iter().copied()).enumerate() {
            let off = j * b;
            prec.view_mut((off, off), (2, 2)).copy_from(&self.beta_precisions[j]);
            for s in 0..k {
                prec[(off + 2 + s, off + 2 + s)] = recip;
            }
        }
        Ok(prec)
    }

    /// `E(uᵀu) = E(u)ᵀE(u) + tr Cov(u)` for the spline block of component `j`
    /// (0 for the mean function, `l` for `ψ_l`).
    pub fn expected_sq_norm_u(&self, nu: &GaussianMoments, j: usize) -> f64 {
        let b = self.block_len();
        let k = self.num_splines;
        let off = j * b + 2;
        let m = nu.mean.rows(off, k);
        m.dot(&m) + nu.cov.view((off, off), (k, k)).trace()
    }

    pub fn messages(&self, nu: &GaussianMoments, recip_mu: f64, recip_psi: &[f64]) -> Result<PenalizationMessages> {
        let d = self.prior_mean.len();
        if nu.dim() != d {
            return Err(FpcaError::Dimension(format!("nu has dimension {}, expected {d}", nu.dim())));
        }
        let prec = self.expected_prior_precision(recip_mu, recip_psi)?;
        let to_nu = Message::new(NaturalParams::GaussianVec(GaussianVecParams {
            eta1: &prec * &self.prior_mean,
            eta2: vec(&prec) * -0.5,
        }));
        let half_k = -0.5 * self.num_splines as f64;
        let variance_message = |j: usize| {
            Message::tagged(
                NaturalParams::InvChiSq(InvChiSqParams::new(half_k, -0.5 * self.expected_sq_norm_u(nu, j))),
                GraphTag::Full,
            )
        };
        Ok(PenalizationMessages {
            to_nu,
            to_sigsq_mu: variance_message(0),
            to_sigsq_psi: (1..=self.num_eigen).map(variance_message).collect(),
        })
    }
}
