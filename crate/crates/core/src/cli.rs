//! Command-line front end: `simulate`, `fit` and `eval`.
//!
//! Exit codes: 0 success, 2 invalid input or flags, 3 I/O failure,
//! 4 non-convergence (outputs are still written), 5 numerical degeneracy.
//! Log verbosity is read from `FPCA_LOG` (`error`, `warn`, `info`, `debug`).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use crate::dataset::FunctionalDataset;
use crate::error::{FpcaError, Result};
use crate::io::{
    evaluate, read_dataset_rescaled, read_dataset_with, read_json, read_reference, write_curves, write_dataset_file,
    write_json, FitDocument, Metrics, Reference, RunManifest, TimeRescale, TruthDocument,
};
use crate::orchestrator::{fit, FitConfig, Hyperparameters};
use crate::postprocess::postprocess;
use crate::simulate::{generate, run_study, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;
pub const EXIT_DEGENERATE: i32 = 5;

pub const LOG_ENV: &str = "FPCA_LOG";

/// Exit code for an error.
pub fn exit_code(err: &FpcaError) -> i32 {
    match err {
        FpcaError::Invalid(_) | FpcaError::Dimension(_) => EXIT_INVALID,
        FpcaError::Io(_) => EXIT_IO,
        FpcaError::Csv(e) if e.is_io_error() => EXIT_IO,
        FpcaError::Csv(_) => EXIT_INVALID,
        FpcaError::Json(e) if e.is_io() => EXIT_IO,
        FpcaError::Json(_) => EXIT_INVALID,
        FpcaError::Degenerate(_)
        | FpcaError::DegenerateEdge { .. }
        | FpcaError::MissingMessage(_)
        | FpcaError::BasisMismatch(_)
        | FpcaError::RankDeficient(_)
        | FpcaError::DegenerateComponent { .. }
        | FpcaError::AmbiguousSign(_) => EXIT_DEGENERATE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "vmp-fpca", version, about = "Bayesian FPCA by variational message passing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw curves from the two-component simulation model.
    Simulate(SimulateArgs),
    /// Fit a dataset CSV.
    Fit(FitArgs),
    /// Score a fit against a truth file, or run a simulation study.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of curves.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory; receives `data.csv` and `truth.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub min_obs: usize,
    #[arg(long, default_value_t = 30)]
    pub max_obs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise_var: f64,
    /// Points of the grid the true functions are written on.
    #[arg(long, default_value_t = 1001)]
    pub grid_size: usize,
}

/// Model and algorithm settings shared by `fit` and study mode.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    pub num_eigen: usize,
    #[arg(long, default_value_t = 10)]
    pub num_splines: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1001)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 1e5)]
    pub hyper_a_eps: f64,
    #[arg(long, default_value_t = 1e5)]
    pub hyper_a_mu: f64,
    #[arg(long, default_value_t = 1e5)]
    pub hyper_a_psi: f64,
    #[arg(long, default_value_t = 1e10)]
    pub prior_beta_var: f64,
    /// Use the plain sweep without the rotation step.
    #[arg(long)]
    pub no_rotation: bool,
}

impl ModelArgs {
    pub fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            num_eigen: self.num_eigen,
            num_splines: self.num_splines,
            tol: self.tol,
            max_iter: self.max_iter,
            grid_size: self.grid_size,
            hyper: Hyperparameters {
                prior_beta_var: self.prior_beta_var,
                a_eps: self.hyper_a_eps,
                a_mu: self.hyper_a_mu,
                a_psi: self.hyper_a_psi,
                ..Hyperparameters::default()
            },
            seed,
            rotation_step: !self.no_rotation,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV with header `curve_id,t,y`. Optional with `--manifest`.
    pub data: Option<PathBuf>,
    /// Fit JSON; the manifest goes next to it as `<stem>.manifest.json`.
    #[arg(long, default_value = "fit.json")]
    pub out: PathBuf,
    /// Seed of the random initial score messages.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Map observed times affinely onto [0, 1].
    #[arg(long)]
    pub rescale_time: bool,
    /// Rerun with the configuration, input and rescaling of a manifest (or
    /// fit JSON). Model flags are ignored.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Also write mean, eigenfunctions and fitted curves as `series,t,value`.
    #[arg(long)]
    pub export_curves: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Fit JSON to score.
    #[arg(long, conflicts_with_all = ["replicates", "n_grid"], requires = "truth")]
    pub fit: Option<PathBuf>,
    /// Truth JSON from `simulate`, or another fit JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Study mode: replicates per sample size.
    #[arg(long, requires = "n_grid")]
    pub replicates: Option<usize>,
    /// Study mode: comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', requires = "replicates")]
    pub n_grid: Option<Vec<usize>>,
    /// Study mode: seed of replicate 0; replicate r uses seed + r.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Metrics JSON, or the study CSV. Printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a).map(|()| EXIT_OK),
        Command::Fit(a) => cmd_fit(&a),
        Command::Eval(a) => cmd_eval(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = SimConfig {
        num_curves: args.n,
        min_obs: args.min_obs,
        max_obs: args.max_obs,
        noise_var: args.noise_var,
        seed: args.seed,
        ..SimConfig::default()
    };
    if args.grid_size < 2 {
        return Err(FpcaError::Invalid("grid size must be at least 2".into()));
    }
    let (data, truth) = generate(&cfg)?;
    fs::create_dir_all(&args.out)?;
    write_dataset_file(&args.out.join("data.csv"), &data)?;
    write_json(&args.out.join("truth.json"), &TruthDocument::new(&truth, args.seed, args.grid_size))?;
    println!(
        "wrote {} curves ({} observations) to {}",
        data.num_curves(),
        data.total_obs(),
        args.out.display()
    );
    Ok(())
}

/// `<dir>/<stem>.manifest.json` for a fit written to `<dir>/<stem>.json`.
pub fn manifest_path(fit_path: &Path) -> PathBuf {
    let stem = fit_path.file_stem().map_or_else(|| "fit".into(), |s| s.to_string_lossy().into_owned());
    fit_path.with_file_name(format!("{stem}.manifest.json"))
}

fn read_manifest(path: &Path) -> Result<RunManifest> {
    let value: serde_json::Value = read_json(path)?;
    let inner = value.get("manifest").cloned().unwrap_or(value);
    Ok(serde_json::from_value(inner)?)
}

fn load(path: &Path, rescale: Option<TimeRescale>, want_rescale: bool) -> Result<(FunctionalDataset, Option<TimeRescale>)> {
    let file = fs::File::open(path)?;
    if rescale.is_some() || !want_rescale {
        Ok((read_dataset_with(file, rescale.as_ref())?, rescale))
    } else {
        let (ds, r) = read_dataset_rescaled(file)?;
        Ok((ds, Some(r)))
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<i32> {
    let (config, input, rescale, want_rescale) = match &args.manifest {
        Some(m) => {
            let man = read_manifest(m)?;
            let input = match (&args.data, &man.input) {
                (Some(p), _) => p.clone(),
                (None, Some(p)) => PathBuf::from(p),
                (None, None) => return Err(FpcaError::Invalid("manifest has no input and no dataset was given".into())),
            };
            (man.config, input, man.rescale, false)
        }
        None => {
            let input = args
                .data
                .clone()
                .ok_or_else(|| FpcaError::Invalid("a dataset path is required".into()))?;
            (args.model.config(args.seed), input, None, args.rescale_time)
        }
    };
    config.validate()?;
    let (data, rescale) = load(&input, rescale, want_rescale)?;
    info!("fitting {} curves, {} observations", data.num_curves(), data.total_obs());

    let start = Instant::now();
    let (model, state) = fit(&data, &config)?;
    let (_, result) = postprocess(&model, &state)?;
    let wall_seconds = start.elapsed().as_secs_f64();

    let manifest = RunManifest {
        input: Some(input.to_string_lossy().into_owned()),
        rescale,
        iterations: state.iterations,
        converged: state.converged,
        final_metric: state.final_metric(),
        wall_seconds,
        ..RunManifest::new(&config)
    };
    let ids: Vec<String> = data.curves.iter().map(|c| c.id.clone()).collect();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_json(&args.out, &FitDocument::new(&result, ids.clone(), manifest.clone())?)?;
    write_json(&manifest_path(&args.out), &manifest)?;
    if let Some(path) = &args.export_curves {
        write_curves(fs::File::create(path)?, &result, &ids, rescale.as_ref())?;
    }

    let status = if state.converged { "converged" } else { "NOT converged" };
    println!(
        "{status} after {} iterations ({wall_seconds:.2} s); eigenvalues {:?}; noise variance {:.4}; wrote {}",
        state.iterations,
        result.eigenvalues,
        result.noise_variance(),
        args.out.display()
    );
    Ok(if state.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    match (&args.fit, &args.replicates, &args.n_grid) {
        (Some(fit_path), _, _) => {
            let truth = args
                .truth
                .as_ref()
                .ok_or_else(|| FpcaError::Invalid("--truth is required with --fit".into()))?;
            let doc: FitDocument = read_json(fit_path)?;
            let metrics = evaluate(&doc.to_fit()?, &read_reference(truth)?)?;
            match &args.out {
                Some(p) => write_json(p, &metrics)?,
                None => println!("{}", serde_json::to_string_pretty(&metrics)?),
            }
            Ok(EXIT_OK)
        }
        (None, Some(reps), Some(sizes)) => cmd_study(args, *reps, sizes),
        _ => Err(FpcaError::Invalid("eval needs --fit and --truth, or --replicates and --n-grid".into())),
    }
}

/// One simulated replicate: outcome of the fit and its accuracy.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub metrics: Metrics,
}

/// Simulate, fit and score every `(n, replicate)` pair in parallel.
pub fn study(config: &FitConfig, sizes: &[usize], replicates: usize, base_seed: u64) -> Vec<(usize, usize, Result<StudyRow>)> {
    run_study(sizes, replicates, base_seed, |sim| {
        let (data, truth) = generate(sim)?;
        let (model, state) = fit(&data, config)?;
        let (_, result) = postprocess(&model, &state)?;
        let reference = Reference::from(&TruthDocument::new(&truth, sim.seed, config.grid_size));
        Ok(StudyRow {
            n: sim.num_curves,
            replicate: (sim.seed - base_seed) as usize,
            seed: sim.seed,
            converged: state.converged,
            iterations: state.iterations,
            metrics: evaluate(&result, &reference)?,
        })
    })
}

fn cmd_study(args: &EvalArgs, replicates: usize, sizes: &[usize]) -> Result<i32> {
    if replicates == 0 || sizes.is_empty() {
        return Err(FpcaError::Invalid("study needs at least one replicate and one sample size".into()));
    }
    let config = args.model.config(FitConfig::default().seed);
    config.validate()?;
    let l = config.num_eigen;
    let k = l.min(2);
    let results = study(&config, sizes, replicates, args.seed);

    let mut header = vec!["n", "replicate", "seed", "status", "iterations", "ise_mean"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend((1..=k).map(|j| format!("ise_psi_{j}")));
    header.extend((1..=l).map(|j| format!("eigenvalue_{j}")));
    header.push("noise_variance".into());

    let sink: Box<dyn std::io::Write> = match &args.out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let mut wtr = csv::Writer::from_writer(sink);
    wtr.write_record(&header)?;
    let mut code = EXIT_OK;
    for (n, r, res) in results {
        let mut rec = vec![n.to_string(), r.to_string(), (args.seed + r as u64).to_string()];
        match res {
            Ok(row) => {
                let m = &row.metrics;
                rec.push(if row.converged { "converged" } else { "not_converged" }.into());
                rec.push(row.iterations.to_string());
                rec.push(m.ise_mean.to_string());
                rec.extend(m.ise_eigenfunctions.iter().map(f64::to_string));
                rec.extend(m.eigenvalues.iter().map(f64::to_string));
                rec.push(m.noise_variance.to_string());
                if !row.converged && code == EXIT_OK {
                    code = EXIT_NOT_CONVERGED;
                }
            }
            Err(e) => {
                error!("n = {n}, replicate {r}: {e}");
                rec.push(format!("error: {e}"));
                rec.resize(header.len(), String::new());
                code = exit_code(&e);
            }
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(code)
}
