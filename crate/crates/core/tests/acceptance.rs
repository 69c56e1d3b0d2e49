//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vmp_fpca::expfam::{
    dup_pinv_transpose_unvec, dup_transpose_vec, duplication_matrix, duplication_pinv, vec, vech, GaussianVecParams,
    GaussianVechParams, InvChiSqParams,
};
use vmp_fpca::io::{evaluate, Metrics, Reference, TruthDocument};
use vmp_fpca::postprocess::{extract, postprocess, trapezoid_weights, FpcaFit, GridEvaluation};
use vmp_fpca::simulate::{generate, SimConfig};
use vmp_fpca::splines::SplineBasis;
use vmp_fpca::{fit, FitConfig, FunctionalDataset, Hyperparameters, ScoreMode};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// One simulated fit with everything the criteria look at.
struct Run {
    n: usize,
    seed: u64,
    eval: GridEvaluation,
    fit: FpcaFit,
    metrics: Metrics,
    converged: bool,
    iterations: usize,
    elapsed: Duration,
}

fn simulate_and_fit(n: usize, seed: u64) -> Run {
    let (data, truth) = generate(&SimConfig::with_curves(n, seed)).expect("simulate");
    let config = FitConfig::default();
    let start = Instant::now();
    let (model, state) = fit(&data, &config).expect("fit");
    let (eval, result) = postprocess(&model, &state).expect("postprocess");
    let elapsed = start.elapsed();
    let reference = Reference::from(&TruthDocument::new(&truth, seed, config.grid_size));
    let metrics = evaluate(&result, &reference).expect("evaluate");
    Run {
        n,
        seed,
        eval,
        fit: result,
        metrics,
        converged: state.converged,
        iterations: state.iterations,
        elapsed,
    }
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose() + DMatrix::identity(d, d) * d as f64
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let d = 1 + k % 10;
        let cov = random_spd(&mut rng, d);
        let mean = DVector::from_fn(d, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
        let m = DMatrix::from_column_slice(d, 1, mean.as_slice());

        let v = GaussianVecParams::from_moments(&mean, &cov).unwrap();
        let back = v.to_moments().unwrap();
        worst = worst.max(rel_err(&back.cov, &cov)).max(rel_err(&DMatrix::from_column_slice(d, 1, back.mean.as_slice()), &m));

        let h = GaussianVechParams::from_moments(&mean, &cov).unwrap();
        let back = h.to_moments().unwrap();
        worst = worst.max(rel_err(&back.cov, &cov)).max(rel_err(&DMatrix::from_column_slice(d, 1, back.mean.as_slice()), &m));

        // the two bases describe the same density
        let via = v.to_vech().unwrap();
        worst = worst.max((&via.eta2 - &h.eta2).amax() / h.eta2.amax().max(1.0));
        worst = worst.max((&via.eta1 - &h.eta1).amax() / h.eta1.amax().max(1.0));
    }
    let round_trip_ok = worst <= 1e-12;

    let mut chi_ok = true;
    for k in 0..100 {
        let shape = 0.1 + k as f64 * 0.37;
        let scale = 0.05 + k as f64 * 1.3;
        let p = InvChiSqParams::from_shape_scale(shape, scale);
        let (xi, lambda) = p.to_shape_scale().unwrap();
        chi_ok &= xi == -2.0 * p.eta1 - 2.0 && lambda == -2.0 * p.eta2;
        chi_ok &= (p.mean_reciprocal().unwrap() - shape / scale).abs() <= 1e-15 * (shape / scale);
    }

    let mut dup_ok = true;
    for d in 1..=6 {
        let a = random_spd(&mut rng, d);
        let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dd = duplication_matrix(d);
        let dp = duplication_pinv(d);
        let vh = vech(&a).unwrap();
        dup_ok &= &dd * &vh == vec(&a);
        dup_ok &= &dp * vec(&a) == vh;
        dup_ok &= &dp * &dd == DMatrix::identity(d * (d + 1) / 2, d * (d + 1) / 2);
        dup_ok &= dd.transpose() * vec(&m) == dup_transpose_vec(&m);
        let u = dp.transpose() * &vh;
        dup_ok &= vec(&dup_pinv_transpose_unvec(&vh).unwrap()) == u;
    }
    let elapsed = start.elapsed();
    outcome(
        round_trip_ok && chi_ok && dup_ok && elapsed < Duration::from_secs(1),
        format!(
            "max relative round-trip error {worst:.1e}, inverse-chi-squared exact: {chi_ok}, duplication identities exact: {dup_ok}, {:.3} s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Mean-field coordinate ascent for the mean-only model, written directly in
/// inverse-gamma form: `q(σ²) = IG(α, β)` with `E(1/σ²) = α/β`.
fn mean_only_oracle(data: &FunctionalDataset, basis: &SplineBasis, hyper: &Hyperparameters) -> DVector<f64> {
    let p = basis.num_basis() + 2;
    let k = basis.num_basis();
    let mut ctc = DMatrix::zeros(p, p);
    let mut cty = DVector::zeros(p);
    let mut yty = 0.0;
    let mut n_obs = 0.0;
    for c in &data.curves {
        let x = basis.design_matrix(&c.times).unwrap();
        let y = DVector::from_column_slice(&c.values);
        ctc += x.transpose() * &x;
        cty += x.transpose() * &y;
        yty += y.dot(&y);
        n_obs += c.len() as f64;
    }
    let (mut r_eps, mut r_mu, mut r_aeps, mut r_amu) = (1.0, 1.0, 1.0, 1.0);
    let mut mean = DVector::zeros(p);
    for _ in 0..100_000 {
        let mut prior = DMatrix::zeros(p, p);
        prior[(0, 0)] = 1.0 / hyper.prior_beta_var;
        prior[(1, 1)] = 1.0 / hyper.prior_beta_var;
        for j in 2..p {
            prior[(j, j)] = r_mu;
        }
        let cov = (&ctc * r_eps + prior).try_inverse().unwrap();
        let new_mean = &cov * &cty * r_eps;

        let resid = yty - 2.0 * new_mean.dot(&cty) + (&ctc * (&new_mean * new_mean.transpose() + &cov)).trace();
        r_eps = (0.5 * (n_obs + 1.0)) / (0.5 * r_aeps + 0.5 * resid);
        r_aeps = 1.0 / (0.5 * r_eps + 0.5 / hyper.a_eps.powi(2));
        let u = new_mean.rows(2, k);
        let sq = u.dot(&u) + cov.view((2, 2), (k, k)).trace();
        r_mu = (0.5 * (k as f64 + 1.0)) / (0.5 * r_amu + 0.5 * sq);
        r_amu = 1.0 / (0.5 * r_mu + 0.5 / hyper.a_mu.powi(2));

        let change = (&new_mean - &mean).amax();
        mean = new_mean;
        if change < 1e-13 * (1.0 + mean.amax()) {
            break;
        }
    }
    mean
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let (data, _) = generate(&SimConfig::with_curves(12, 7)).unwrap();
    let config = FitConfig {
        num_eigen: 1,
        num_splines: 8,
        tol: 1e-13,
        max_iter: 20_000,
        score_mode: ScoreMode::FixedAtZero,
        hyper: Hyperparameters {
            prior_beta_var: 1e4,
            ..Hyperparameters::default()
        },
        ..FitConfig::default()
    };
    let (model, state) = match fit(&data, &config) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let raw = extract(&model, &state).unwrap();
    let vmp = raw.nu_block(0);
    let oracle = mean_only_oracle(&data, &model.basis, &config.hyper);
    let diff = (&vmp - &oracle).amax();
    let elapsed = start.elapsed();
    outcome(
        state.converged && diff <= 1e-6 && elapsed < Duration::from_secs(5),
        format!(
            "max |E(ν_μ) − oracle| = {diff:.2e} after {} sweeps (converged: {}), {:.2} s",
            state.iterations,
            state.converged,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3(runs: &[Run], elapsed: Duration) -> Outcome {
    let mu = median(runs.iter().map(|r| r.metrics.ise_mean).collect());
    let psi1 = median(runs.iter().map(|r| r.metrics.ise_eigenfunctions[0]).collect());
    let converged = runs.iter().filter(|r| r.converged).count();
    outcome(
        mu <= 0.2 && psi1 <= 0.2 && elapsed < Duration::from_secs(120),
        format!(
            "n = 36, {} seeds: median ISE(μ) = {mu:.4}, median ISE(ψ1) = {psi1:.4}, {converged} converged, {:.1} s",
            runs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4(by_n: &[(usize, Vec<Run>)], elapsed: Duration) -> Outcome {
    let medians: Vec<[f64; 3]> = by_n
        .iter()
        .map(|(_, runs)| {
            [
                median(runs.iter().map(|r| r.metrics.ise_mean).collect()),
                median(runs.iter().map(|r| r.metrics.ise_eigenfunctions[0]).collect()),
                median(runs.iter().map(|r| r.metrics.ise_eigenfunctions[1]).collect()),
            ]
        })
        .collect();
    let monotone = medians.windows(2).all(|w| (0..3).all(|k| w[1][k] <= w[0][k]));
    let table: Vec<String> = by_n
        .iter()
        .zip(&medians)
        .map(|((n, _), m)| format!("n={n}: ({:.4}, {:.4}, {:.4})", m[0], m[1], m[2]))
        .collect();
    outcome(
        monotone && elapsed < Duration::from_secs(600),
        format!("median ISE (μ, ψ1, ψ2) {}, {:.1} s", table.join("; "), elapsed.as_secs_f64()),
    )
}

fn criterion_5(run: &Run) -> Outcome {
    let ev = &run.fit.eigenvalues;
    let ok = ev.len() == 3
        && (0.8..=1.2).contains(&ev[0])
        && (0.2..=0.3).contains(&ev[1])
        && ev[2] < 0.05;
    outcome(ok, format!("n = 500: eigenvalues ({:.4}, {:.4}, {:.2e})", ev[0], ev[1], ev[2]))
}

fn criterion_6(run: &Run) -> Outcome {
    let s = run.fit.noise_variance();
    outcome((0.9..=1.1).contains(&s), format!("n = 250: 1/E(1/σ²_ε) = {s:.4}"))
}

/// Worst violations of the post-processing identities for one fit.
fn invariant_errors(run: &Run) -> [f64; 4] {
    let fit = &run.fit;
    let invariance = (run.eval.fitted_curves() - fit.fitted_curves()).amax();

    let n = fit.scores.nrows() as f64;
    let scale = fit.scores.amax().max(f64::MIN_POSITIVE);
    let mean_err = (0..fit.num_eigen())
        .map(|l| fit.scores.column(l).sum().abs() / n)
        .fold(0.0, f64::max)
        / scale;

    let mut centered = fit.scores.clone();
    let means: Vec<f64> = (0..fit.num_eigen()).map(|l| fit.scores.column(l).mean()).collect();
    for mut row in centered.row_iter_mut() {
        for (l, m) in means.iter().enumerate() {
            row[l] -= m;
        }
    }
    let cov = centered.transpose() * &centered / (n - 1.0);
    let diag_max = cov.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut off = 0.0f64;
    for i in 0..cov.nrows() {
        for j in 0..cov.ncols() {
            if i != j {
                off = off.max(cov[(i, j)].abs());
            }
        }
    }

    let w = trapezoid_weights(&fit.grid);
    let gram = fit.eigenfunctions.transpose() * DMatrix::from_diagonal(&w) * &fit.eigenfunctions;
    let ortho = (gram - DMatrix::identity(fit.num_eigen(), fit.num_eigen())).amax();
    [invariance, mean_err, off / diag_max, ortho]
}

fn criterion_7(all: &[&Run]) -> Outcome {
    let mut worst = [0.0f64; 4];
    let mut failing = Vec::new();
    for run in all {
        let e = invariant_errors(run);
        for k in 0..4 {
            worst[k] = worst[k].max(e[k]);
        }
        if !(e[0] <= 1e-8 && e[1] <= 1e-8 && e[2] <= 1e-8 && e[3] <= 1e-3) {
            failing.push(format!("(n={}, seed={})", run.n, run.seed));
        }
    }
    outcome(
        failing.is_empty(),
        format!(
            "{} fits: fit invariance {:.1e}, score mean {:.1e}, off-diagonal covariance {:.1e}, orthonormality {:.1e}{}",
            all.len(),
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            if failing.is_empty() { String::new() } else { format!("; failing {}", failing.join(" ")) }
        ),
    )
}

fn criterion_8(run: &Run) -> Outcome {
    let secs = run.elapsed.as_secs_f64();
    outcome(
        secs < 120.0,
        format!(
            "n = 500, L = 3, K = 10: {secs:.2} s, {} sweeps (converged: {})",
            run.iterations, run.converged
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |k: usize, o: Outcome| {
        println!("criterion {k}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, o));
    };

    report(1, criterion_1());
    report(2, criterion_2());

    let start = Instant::now();
    let replication: Vec<Run> = (1..=20).map(|s| simulate_and_fit(36, s)).collect();
    report(3, criterion_3(&replication, start.elapsed()));

    let start = Instant::now();
    let trend: Vec<(usize, Vec<Run>)> = [10, 50, 100]
        .iter()
        .map(|&n| (n, (1..=20).map(|s| simulate_and_fit(n, s)).collect()))
        .collect();
    report(4, criterion_4(&trend, start.elapsed()));

    let large = simulate_and_fit(500, 1);
    report(5, criterion_5(&large));
    let noise = simulate_and_fit(250, 1);
    report(6, criterion_6(&noise));

    let all: Vec<&Run> = replication
        .iter()
        .chain(trend.iter().flat_map(|(_, r)| r))
        .chain([&large, &noise])
        .collect();
    report(7, criterion_7(&all));
    report(8, criterion_8(&large));

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(k, _)| *k).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
