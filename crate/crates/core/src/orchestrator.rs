//! Initialization, the fixed-order fragment sweep and convergence detection.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::FunctionalDataset;
use crate::error::{FpcaError, Result};
use crate::expfam::{GaussianMoments, GaussianVecParams, GaussianVechParams, InvChiSqParams, NaturalParams};
use crate::fragments::{
    gaussian_prior_message, igw_prior_message, iterated_igw_messages, BetaPrior, CurveData, GaussianBasis,
    LikelihoodFragment, PenalizationFragment,
};
use crate::graph::{npbf, q_natural_params, refresh_incoming, FactorGraph, FactorId, GraphTag, Message, MessageStore, NodeId};
use crate::splines::SplineBasis;

pub const MIN_GRID_SIZE: usize = 101;

/// Prior hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// `Σ_β = prior_beta_var · I₂` for the mean and every eigenfunction.
    pub prior_beta_var: f64,
    pub a_eps: f64,
    pub a_mu: f64,
    pub a_psi: f64,
    /// `Σ_ζ = score_prior_var · I_L` for every curve.
    pub score_prior_var: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            prior_beta_var: 1e10,
            a_eps: 1e5,
            a_mu: 1e5,
            a_psi: 1e5,
            score_prior_var: 1.0,
        }
    }
}

/// How the score vectors are treated during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScoreMode {
    #[default]
    Estimate,
    /// Scores are point masses at zero and never updated. The eigenfunction
    /// variance chains then carry no information from the data and are held
    /// at their initial messages.
    FixedAtZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub num_eigen: usize,
    pub num_splines: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub grid_size: usize,
    pub hyper: Hyperparameters,
    /// Seed for the random initial score messages.
    pub seed: u64,
    /// Variance of the initial Gaussian messages to `ν` and each `ζ_i`.
    pub init_variance: f64,
    pub score_mode: ScoreMode,
    /// After each sweep, rotate the eigenfunction blocks of `q(ν)` and the
    /// score densities by the orthogonal matrix that maximizes the variational
    /// objective over such rotations. Fixed points are unchanged; convergence
    /// along the weakly identified rotation directions is much faster.
    pub rotation_step: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            num_eigen: 3,
            num_splines: 10,
            tol: 1e-5,
            max_iter: 500,
            grid_size: 1001,
            hyper: Hyperparameters::default(),
            seed: 0,
            init_variance: 100.0,
            score_mode: ScoreMode::Estimate,
            rotation_step: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FpcaError::Invalid(msg));
        if self.num_eigen < 1 {
            return bad("number of eigenfunctions must be at least 1".into());
        }
        if self.num_splines < 3 {
            return bad(format!("number of splines must be at least 3, got {}", self.num_splines));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tol));
        }
        if self.max_iter < 1 {
            return bad("max_iter must be at least 1".into());
        }
        if self.grid_size < MIN_GRID_SIZE {
            return bad(format!("grid size must be at least {MIN_GRID_SIZE}, got {}", self.grid_size));
        }
        let h = &self.hyper;
        for (name, v) in [
            ("prior beta variance", h.prior_beta_var),
            ("A_eps", h.a_eps),
            ("A_mu", h.a_mu),
            ("A_psi", h.a_psi),
            ("score prior variance", h.score_prior_var),
            ("initial message variance", self.init_variance),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

/// Messages plus bookkeeping for one fit.
#[derive(Debug, Clone)]
pub struct VmpState {
    pub store: MessageStore,
    pub iterations: usize,
    /// Convergence metric after each sweep.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl VmpState {
    pub fn final_metric(&self) -> Option<f64> {
        self.history.last().copied()
    }
}

/// The static parts of a fit: graph, fragments and spline basis.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: FitConfig,
    pub basis: SplineBasis,
    pub graph: FactorGraph,
    pub likelihood: LikelihoodFragment,
    pub penalization: PenalizationFragment,
}

/// `‖a − b‖∞ / (1 + ‖b‖∞)` over the flattened natural parameters.
fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let diff = new.iter().zip(old).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = old.iter().map(|b| b.abs()).fold(0.0, f64::max);
    diff / (1.0 + scale)
}

/// Natural parameters of every q-density, in graph node order.
pub type Snapshot = Vec<Vec<f64>>;

/// Max over nodes of `‖η_new − η_old‖∞ / (1 + ‖η_old‖∞)`.
pub fn convergence_metric(prev: &Snapshot, curr: &Snapshot) -> f64 {
    prev.iter()
        .zip(curr)
        .map(|(old, new)| relative_change(new, old))
        .fold(0.0, f64::max)
}

fn chi_sq(eta1: f64, eta2: f64) -> Message {
    Message::tagged(NaturalParams::InvChiSq(InvChiSqParams::new(eta1, eta2)), GraphTag::Full)
}

impl Model {
    pub fn new(dataset: &FunctionalDataset, config: &FitConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let basis = SplineBasis::new(config.num_splines)?;
        let curves = dataset
            .curves
            .iter()
            .map(|c| CurveData::new(basis.design_matrix(&c.times)?, DVector::from_column_slice(&c.values)))
            .collect::<Result<Vec<_>>>()?;
        let likelihood = LikelihoodFragment::new(curves, config.num_eigen)?;
        let beta = BetaPrior::isotropic(config.hyper.prior_beta_var);
        let penalization = PenalizationFragment::new(config.num_splines, &vec![beta; config.num_eigen + 1])?;
        Ok(Self {
            config: config.clone(),
            basis,
            graph: FactorGraph::new(dataset.num_curves(), config.num_eigen),
            likelihood,
            penalization,
        })
    }

    pub fn num_curves(&self) -> usize {
        self.graph.num_curves
    }

    fn nu_dim(&self) -> usize {
        self.likelihood.nu_dim()
    }

    fn score_prior(&self) -> Result<Message> {
        let l = self.config.num_eigen;
        gaussian_prior_message(
            &DVector::zeros(l),
            &(DMatrix::identity(l, l) * self.config.hyper.score_prior_var),
            GaussianBasis::Vech,
        )
    }

    /// Set every factor-to-node message to its starting value.
    ///
    /// Gaussian messages have covariance `init_variance · I`. The messages from
    /// the likelihood to each `ζ_i` have seeded standard normal means so the
    /// eigenfunction blocks are not stuck at the symmetric zero solution.
    /// Variance messages start at `(−3/2, −1/2)`, i.e. `E(1/·) = 1`.
    pub fn initialize(&self) -> Result<VmpState> {
        let cfg = &self.config;
        let l = cfg.num_eigen;
        let d = self.nu_dim();
        let mut store = MessageStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let nu_init = Message::new(NaturalParams::GaussianVec(GaussianVecParams::from_moments(
            &DVector::zeros(d),
            &(DMatrix::identity(d, d) * cfg.init_variance),
        )?));
        store.set_factor_to_node(FactorId::Likelihood, NodeId::Nu, nu_init.clone())?;
        store.set_factor_to_node(FactorId::Penalization, NodeId::Nu, nu_init)?;

        let score_prior = self.score_prior()?;
        let zeta_cov = DMatrix::identity(l, l) * cfg.init_variance;
        for i in 0..self.num_curves() {
            let mean = DVector::from_fn(l, |_, _| rng.sample::<f64, _>(StandardNormal));
            let msg = Message::new(NaturalParams::GaussianVech(GaussianVechParams::from_moments(&mean, &zeta_cov)?));
            store.set_factor_to_node(FactorId::Likelihood, NodeId::Zeta(i), msg)?;
            store.set_factor_to_node(FactorId::ZetaPrior(i), NodeId::Zeta(i), score_prior.clone())?;
        }

        let unit = chi_sq(-1.5, -0.5);
        let chains = std::iter::once((NodeId::SigmaSqEps, NodeId::AuxEps, FactorId::Likelihood, FactorId::IteratedEps, FactorId::AuxPriorEps, cfg.hyper.a_eps))
            .chain(std::iter::once((NodeId::SigmaSqMu, NodeId::AuxMu, FactorId::Penalization, FactorId::IteratedMu, FactorId::AuxPriorMu, cfg.hyper.a_mu)))
            .chain((0..l).map(|j| {
                (
                    NodeId::SigmaSqPsi(j),
                    NodeId::AuxPsi(j),
                    FactorId::Penalization,
                    FactorId::IteratedPsi(j),
                    FactorId::AuxPriorPsi(j),
                    cfg.hyper.a_psi,
                )
            }));
        for (sigma, aux, data_factor, iterated, aux_prior, scale) in chains {
            store.set_factor_to_node(data_factor, sigma, unit.clone())?;
            store.set_factor_to_node(iterated, sigma, unit.clone())?;
            store.set_factor_to_node(iterated, aux, unit.clone())?;
            store.set_factor_to_node(aux_prior, aux, igw_prior_message(scale)?)?;
        }

        // Node-to-factor messages follow from the factor-to-node ones.
        for factor in self.graph.factors() {
            refresh_incoming(&self.graph, factor, &mut store)?;
        }
        Ok(VmpState {
            store,
            iterations: 0,
            history: Vec::new(),
            converged: false,
        })
    }

    /// q-density natural parameters of every node.
    pub fn snapshot(&self, store: &MessageStore) -> Result<Snapshot> {
        self.graph
            .nodes()
            .into_iter()
            .map(|node| q_natural_params(&self.graph, node, store).map(|p| p.to_flat()))
            .collect()
    }

    /// Moments of `ν` and each `ζ_i` with respect to the two-directional
    /// distributions on the likelihood's edges.
    fn likelihood_inputs(&self, store: &MessageStore) -> Result<(GaussianMoments, Vec<GaussianMoments>, f64)> {
        let nu = npbf(FactorId::Likelihood, NodeId::Nu, store)
            .and_then(|p| p.as_gaussian_vec()?.to_moments())
            .map_err(|e| edge_error("likelihood <-> nu", e))?;
        let l = self.config.num_eigen;
        let zetas = match self.config.score_mode {
            ScoreMode::Estimate => (0..self.num_curves())
                .map(|i| {
                    npbf(FactorId::Likelihood, NodeId::Zeta(i), store)
                        .and_then(|p| p.as_gaussian_vech()?.to_moments())
                        .map_err(|e| edge_error(&format!("likelihood <-> zeta[{i}]"), e))
                })
                .collect::<Result<Vec<_>>>()?,
            ScoreMode::FixedAtZero => vec![GaussianMoments::point_mass(DVector::zeros(l)); self.num_curves()],
        };
        let recip = npbf(FactorId::Likelihood, NodeId::SigmaSqEps, store)
            .and_then(|p| p.as_inv_chi_sq()?.mean_reciprocal())
            .map_err(|e| edge_error("likelihood <-> sigma^2_eps", e))?;
        Ok((nu, zetas, recip))
    }

    /// The message to `ν` is sent first; the score and noise messages then use
    /// the refreshed `q(ν)`, and the noise message the refreshed `q(ζ_i)`.
    fn update_likelihood(&self, store: &mut MessageStore) -> Result<()> {
        refresh_incoming(&self.graph, FactorId::Likelihood, store)?;
        let (nu, zetas, recip) = self.likelihood_inputs(store)?;
        let exp = self.likelihood.expectations(&nu, &zetas, recip)?;
        store.set_factor_to_node(FactorId::Likelihood, NodeId::Nu, self.likelihood.message_to_nu(&exp))?;

        if self.config.score_mode == ScoreMode::Estimate {
            let (nu, zetas, recip) = self.likelihood_inputs(store)?;
            let exp = self.likelihood.expectations(&nu, &zetas, recip)?;
            for i in 0..self.num_curves() {
                let msg = self.likelihood.message_to_zeta(&exp, i)?;
                store.set_factor_to_node(FactorId::Likelihood, NodeId::Zeta(i), msg)?;
            }
        }

        let (nu, zetas, recip) = self.likelihood_inputs(store)?;
        let exp = self.likelihood.expectations(&nu, &zetas, recip)?;
        store.set_factor_to_node(FactorId::Likelihood, NodeId::SigmaSqEps, self.likelihood.message_to_sigsq_eps(&exp))
    }

    fn update_penalization(&self, store: &mut MessageStore) -> Result<()> {
        refresh_incoming(&self.graph, FactorId::Penalization, store)?;
        let recip = |node: NodeId| -> Result<f64> {
            npbf(FactorId::Penalization, node, store)
                .and_then(|p| p.as_inv_chi_sq()?.mean_reciprocal())
                .map_err(|e| edge_error(&format!("penalization <-> {node}"), e))
        };
        let recip_mu = recip(NodeId::SigmaSqMu)?;
        let recip_psi = (0..self.config.num_eigen)
            .map(|l| recip(NodeId::SigmaSqPsi(l)))
            .collect::<Result<Vec<_>>>()?;
        let nu = npbf(FactorId::Penalization, NodeId::Nu, store)
            .and_then(|p| p.as_gaussian_vec()?.to_moments())
            .map_err(|e| edge_error("penalization <-> nu", e))?;
        let msgs = self.penalization.messages(&nu, recip_mu, &recip_psi)?;
        store.set_factor_to_node(FactorId::Penalization, NodeId::Nu, msgs.to_nu)?;
        store.set_factor_to_node(FactorId::Penalization, NodeId::SigmaSqMu, msgs.to_sigsq_mu)?;
        if self.config.score_mode == ScoreMode::Estimate {
            for (l, msg) in msgs.to_sigsq_psi.into_iter().enumerate() {
                store.set_factor_to_node(FactorId::Penalization, NodeId::SigmaSqPsi(l), msg)?;
            }
        }
        Ok(())
    }

    fn update_iterated(&self, store: &mut MessageStore, factor: FactorId, sigma: NodeId, aux: NodeId) -> Result<()> {
        refresh_incoming(&self.graph, factor, store)?;
        let sigma_npbf = npbf(factor, sigma, store)?.as_inv_chi_sq()?;
        let aux_npbf = npbf(factor, aux, store)?.as_inv_chi_sq()?;
        let (to_sigma, to_aux) = iterated_igw_messages(sigma_npbf, aux_npbf)?;
        store.set_factor_to_node(factor, sigma, to_sigma)?;
        store.set_factor_to_node(factor, aux, to_aux)
    }

    fn update_aux_prior(&self, store: &mut MessageStore, factor: FactorId, aux: NodeId, scale: f64) -> Result<()> {
        refresh_incoming(&self.graph, factor, store)?;
        store.set_factor_to_node(factor, aux, igw_prior_message(scale)?)
    }

    fn update_score_priors(&self, store: &mut MessageStore) -> Result<()> {
        let prior = self.score_prior()?;
        for i in 0..self.num_curves() {
            refresh_incoming(&self.graph, FactorId::ZetaPrior(i), store)?;
            store.set_factor_to_node(FactorId::ZetaPrior(i), NodeId::Zeta(i), prior.clone())?;
        }
        Ok(())
    }

    /// One pass over every fragment in the fixed order: likelihood,
    /// `p(σ²_ε|a_ε)`, `p(a_ε)`, penalization, score priors, `p(σ²_μ|a_μ)`,
    /// `p(a_μ)`, then `p(σ²_ψl|a_ψl)` and `p(a_ψl)` for each `l`.
    pub fn sweep(&self, store: &mut MessageStore) -> Result<()> {
        let h = &self.config.hyper;
        self.update_likelihood(store)?;
        self.update_iterated(store, FactorId::IteratedEps, NodeId::SigmaSqEps, NodeId::AuxEps)?;
        self.update_aux_prior(store, FactorId::AuxPriorEps, NodeId::AuxEps, h.a_eps)?;
        self.update_penalization(store)?;
        self.update_score_priors(store)?;
        self.update_iterated(store, FactorId::IteratedMu, NodeId::SigmaSqMu, NodeId::AuxMu)?;
        self.update_aux_prior(store, FactorId::AuxPriorMu, NodeId::AuxMu, h.a_mu)?;
        if self.config.score_mode == ScoreMode::Estimate {
            for l in 0..self.config.num_eigen {
                self.update_iterated(store, FactorId::IteratedPsi(l), NodeId::SigmaSqPsi(l), NodeId::AuxPsi(l))?;
                self.update_aux_prior(store, FactorId::AuxPriorPsi(l), NodeId::AuxPsi(l), h.a_psi)?;
            }
            if self.config.rotation_step {
                self.rotate(store)?;
            }
        }
        Ok(())
    }

    /// Orthogonal `R` minimizing `Σ_l E(1/σ²_ψl) E‖u'_l‖²` where
    /// `[u'_1 … u'_L] = [u_1 … u_L] Rᵀ`.
    ///
    /// The substitution `V_ψ → V_ψ Rᵀ`, `ζ_i → R ζ_i` leaves the expected
    /// log-likelihood, the `N(0, σ²_ζ I)` score priors, the isotropic `β` prior
    /// and every entropy term unchanged, so only the spline penalty moves.
    /// With `M_kk' = E(u_kᵀ u_k')` the penalty is `tr{diag(r) R M Rᵀ}`, which
    /// is smallest when the largest `r_l` is paired with the smallest
    /// eigenvalue of `M`.
    pub fn optimal_rotation(recip_psi: &[f64], m: &DMatrix<f64>) -> DMatrix<f64> {
        let l = recip_psi.len();
        let eig = m.clone().symmetric_eigen();
        let mut by_value: Vec<usize> = (0..l).collect();
        by_value.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut by_weight: Vec<usize> = (0..l).collect();
        by_weight.sort_by(|&a, &b| recip_psi[b].total_cmp(&recip_psi[a]));
        let mut r = DMatrix::zeros(l, l);
        for (&row, &col) in by_weight.iter().zip(&by_value) {
            let mut e = eig.eigenvectors.column(col).transpose();
            if e[row] < 0.0 {
                e.neg_mut();
            }
            r.set_row(row, &e);
        }
        r
    }

    fn rotate(&self, store: &mut MessageStore) -> Result<()> {
        let l = self.config.num_eigen;
        let k = self.config.num_splines;
        let b = k + 2;
        let d = self.nu_dim();
        let recip_psi = (0..l)
            .map(|j| q_natural_params(&self.graph, NodeId::SigmaSqPsi(j), store)?.as_inv_chi_sq()?.mean_reciprocal())
            .collect::<Result<Vec<_>>>()?;
        let nu = q_natural_params(&self.graph, NodeId::Nu, store)?.as_gaussian_vec()?.to_moments()?;
        let second = nu.second_moment();
        let m = DMatrix::from_fn(l, l, |a, c| {
            let (oa, oc) = ((a + 1) * b + 2, (c + 1) * b + 2);
            second.view((oa, oc), (k, k)).trace()
        });
        let r = Self::optimal_rotation(&recip_psi, &m);
        if (&r - DMatrix::identity(l, l)).amax() < 1e-12 {
            return Ok(());
        }

        let mut t = DMatrix::identity(d, d);
        t.view_mut((b, b), (l * b, l * b)).copy_from(&r.kronecker(&DMatrix::identity(b, b)));
        let nu_new = GaussianVecParams::from_moments(&(&t * &nu.mean), &crate::expfam::symmetrize(&(&t * &nu.cov * t.transpose())))?;
        let pen = store.factor_to_node(FactorId::Penalization, NodeId::Nu)?.params.as_gaussian_vec()?.clone();
        let lik_nu = GaussianVecParams {
            eta1: nu_new.eta1 - pen.eta1,
            eta2: nu_new.eta2 - pen.eta2,
        };
        store.set_factor_to_node(FactorId::Likelihood, NodeId::Nu, Message::new(NaturalParams::GaussianVec(lik_nu)))?;

        let prior = self.score_prior()?;
        let prior = prior.params.as_gaussian_vech()?;
        for i in 0..self.num_curves() {
            let z = q_natural_params(&self.graph, NodeId::Zeta(i), store)?.as_gaussian_vech()?.to_moments()?;
            let z_new = GaussianVechParams::from_moments(&(&r * &z.mean), &crate::expfam::symmetrize(&(&r * &z.cov * r.transpose())))?;
            let lik = GaussianVechParams {
                eta1: z_new.eta1 - &prior.eta1,
                eta2: z_new.eta2 - &prior.eta2,
            };
            store.set_factor_to_node(FactorId::Likelihood, NodeId::Zeta(i), Message::new(NaturalParams::GaussianVech(lik)))?;
        }
        Ok(())
    }

    /// Sweep until the metric drops below `tol` or `max_iter` sweeps have run
    /// in total. A state that is already converged is returned unchanged.
    pub fn run(&self, state: &mut VmpState) -> Result<()> {
        if state.converged {
            return Ok(());
        }
        let mut prev = self.snapshot(&state.store)?;
        while state.iterations < self.config.max_iter {
            let iteration = state.iterations + 1;
            self.sweep(&mut state.store).map_err(|e| match e {
                FpcaError::DegenerateEdge { edge, reason, .. } => FpcaError::DegenerateEdge { edge, iteration, reason },
                other => FpcaError::DegenerateEdge {
                    edge: "sweep".into(),
                    iteration,
                    reason: other.to_string(),
                },
            })?;
            let curr = self.snapshot(&state.store).map_err(|e| FpcaError::DegenerateEdge {
                edge: "q-density".into(),
                iteration,
                reason: e.to_string(),
            })?;
            let metric = convergence_metric(&prev, &curr);
            if !metric.is_finite() {
                return Err(FpcaError::DegenerateEdge {
                    edge: "q-density".into(),
                    iteration,
                    reason: "non-finite natural parameters".into(),
                });
            }
            state.iterations = iteration;
            state.history.push(metric);
            debug!("iteration {iteration}: metric {metric:.3e}");
            prev = curr;
            if metric < self.config.tol {
                state.converged = true;
                info!("converged after {iteration} iterations");
                return Ok(());
            }
        }
        info!("stopped at max_iter = {} without converging", self.config.max_iter);
        Ok(())
    }

    /// Run further sweeps on an existing state, e.g. after raising `max_iter`.
    pub fn resume(&self, state: &mut VmpState) -> Result<()> {
        self.run(state)
    }
}

fn edge_error(edge: &str, e: FpcaError) -> FpcaError {
    FpcaError::DegenerateEdge {
        edge: edge.to_string(),
        iteration: 0,
        reason: e.to_string(),
    }
}

/// Build the model, initialize and run to convergence or `max_iter`.
pub fn fit(dataset: &FunctionalDataset, config: &FitConfig) -> Result<(Model, VmpState)> {
    let model = Model::new(dataset, config)?;
    let mut state = model.initialize()?;
    model.run(&mut state)?;
    Ok((model, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Curve;
    use crate::graph::{Direction, Topology};

    fn toy_dataset() -> FunctionalDataset {
        let curves = (0..6)
            .map(|i| {
                let times: Vec<f64> = (0..15).map(|j| (j as f64 + 0.5) / 15.0).collect();
                let shift = (i as f64 - 2.5) * 0.4;
                let values = times
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let wobble = 0.3 * ((7 * i + 13 * j) as f64 * 1.7).sin();
                        (std::f64::consts::PI * t).sin() + shift * (2.0 * std::f64::consts::PI * t).cos() + wobble
                    })
                    .collect();
                Curve::new(format!("c{i}"), times, values).unwrap()
            })
            .collect();
        FunctionalDataset::new(curves).unwrap()
    }

    fn small_config() -> FitConfig {
        FitConfig {
            num_eigen: 1,
            num_splines: 5,
            ..FitConfig::default()
        }
    }

    #[test]
    fn metric_arithmetic() {
        let a = vec![vec![1.0]];
        assert_eq!(convergence_metric(&a, &a), 0.0);
        assert_eq!(convergence_metric(&a, &vec![vec![2.0]]), 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        for cfg in [
            FitConfig { num_eigen: 0, ..FitConfig::default() },
            FitConfig { num_splines: 2, ..FitConfig::default() },
            FitConfig { tol: 0.0, ..FitConfig::default() },
            FitConfig { grid_size: 100, ..FitConfig::default() },
            FitConfig {
                hyper: Hyperparameters { a_eps: -1.0, ..Hyperparameters::default() },
                ..FitConfig::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(FpcaError::Invalid(_))));
        }
    }

    #[test]
    fn initialization_is_complete_and_deterministic() {
        let ds = toy_dataset();
        let model = Model::new(&ds, &small_config()).unwrap();
        let s1 = model.initialize().unwrap();
        let s2 = model.initialize().unwrap();
        for node in model.graph.nodes() {
            q_natural_params(&model.graph, node, &s1.store).unwrap();
            for f in model.graph.node_neighbors(node) {
                let a = s1.store.get(f, node, Direction::FactorToNode).unwrap();
                let b = s2.store.get(f, node, Direction::FactorToNode).unwrap();
                assert_eq!(a.params.to_flat(), b.params.to_flat());
            }
        }
        let prior = s1.store.factor_to_node(FactorId::AuxPriorEps, NodeId::AuxEps).unwrap();
        assert_eq!(prior.params.to_flat(), igw_prior_message(1e5).unwrap().params.to_flat());
        let zp = s1.store.factor_to_node(FactorId::ZetaPrior(0), NodeId::Zeta(0)).unwrap();
        assert_eq!(zp.params.to_flat(), model.score_prior().unwrap().params.to_flat());
    }

    #[test]
    fn fit_converges_and_is_fixed_point() {
        let ds = toy_dataset();
        let (model, mut state) = fit(&ds, &small_config()).unwrap();
        assert!(state.converged, "history tail {:?}", &state.history[state.history.len().saturating_sub(5)..]);
        assert!(state.final_metric().unwrap() < model.config.tol);
        assert!(state.history.iter().all(|m| m.is_finite() && *m >= 0.0));
        let before = state.history.len();
        model.run(&mut state).unwrap();
        assert_eq!(state.history.len(), before);

        // one more sweep moves nothing by more than tol
        let prev = model.snapshot(&state.store).unwrap();
        let mut store = state.store.clone();
        model.sweep(&mut store).unwrap();
        let curr = model.snapshot(&store).unwrap();
        assert!(convergence_metric(&prev, &curr) < model.config.tol);
    }

    #[test]
    fn max_iter_reports_non_convergence() {
        let ds = toy_dataset();
        let cfg = FitConfig { max_iter: 2, ..small_config() };
        let (_, state) = fit(&ds, &cfg).unwrap();
        assert!(!state.converged);
        assert_eq!(state.iterations, 2);
        assert_eq!(state.history.len(), 2);
    }

    #[test]
    fn optimal_rotation_minimizes_weighted_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = &a * a.transpose() + DMatrix::identity(3, 3);
        let weights = [0.5, 4.0, 1.5];
        let objective = |r: &DMatrix<f64>| {
            let rm = r * &m * r.transpose();
            (0..3).map(|j| weights[j] * rm[(j, j)]).sum::<f64>()
        };
        let r = Model::optimal_rotation(&weights, &m);
        assert!((r.transpose() * &r - DMatrix::identity(3, 3)).amax() < 1e-12);
        let best = objective(&r);
        for _ in 0..200 {
            let g = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = g.qr().q();
            assert!(objective(&q) >= best - 1e-10);
        }
    }

    #[test]
    fn rotation_step_preserves_likelihood_expectations() {
        let ds = toy_dataset();
        let cfg = FitConfig {
            num_eigen: 2,
            max_iter: 5,
            rotation_step: false,
            ..small_config()
        };
        let (model, state) = fit(&ds, &cfg).unwrap();
        let summary = |store: &MessageStore| {
            let nu = q_natural_params(&model.graph, NodeId::Nu, store).unwrap().as_gaussian_vec().unwrap().to_moments().unwrap();
            let zetas: Vec<_> = (0..model.num_curves())
                .map(|i| {
                    q_natural_params(&model.graph, NodeId::Zeta(i), store)
                        .unwrap()
                        .as_gaussian_vech()
                        .unwrap()
                        .to_moments()
                        .unwrap()
                })
                .collect();
            let exp = model.likelihood.expectations(&nu, &zetas, 1.0).unwrap();
            let resid: Vec<f64> = (0..model.num_curves()).map(|i| model.likelihood.expected_sq_residual(&exp, i)).collect();
            let fits: Vec<DVector<f64>> = exp.zeta_tilde_mean.iter().map(|z| &exp.v_mean * z).collect();
            (resid, fits)
        };
        let (r0, f0) = summary(&state.store);
        let mut store = state.store.clone();
        model.rotate(&mut store).unwrap();
        let (r1, f1) = summary(&store);
        for (a, b) in r0.iter().zip(&r1) {
            assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
        }
        for (a, b) in f0.iter().zip(&f1) {
            assert!((a - b).amax() < 1e-8 * a.amax().max(1.0));
        }
    }

    #[test]
    fn resume_continues_from_state() {
        let ds = toy_dataset();
        let cfg = FitConfig { max_iter: 3, ..small_config() };
        let (_, mut state) = fit(&ds, &cfg).unwrap();
        let full = Model::new(&ds, &small_config()).unwrap();
        full.resume(&mut state).unwrap();
        assert!(state.converged);
        assert!(state.iterations > 3);
    }
}
