//! Simulate 36 curves, fit three components and compare with the truth.
//!
//! `cargo run --release --example fit_simulated -- [n] [seed]`

use vmp_fpca::io::{evaluate, Reference, TruthDocument};
use vmp_fpca::simulate::{generate, SimConfig};
use vmp_fpca::{fit, postprocess, FitConfig};

fn main() -> vmp_fpca::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|a| a.parse().ok()).unwrap_or(36);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);

    let (data, truth) = generate(&SimConfig::with_curves(n, seed))?;
    println!("{} curves, {} observations", data.num_curves(), data.total_obs());

    let config = FitConfig::default();
    let (model, state) = fit(&data, &config)?;
    println!(
        "converged: {} after {} sweeps, final metric {:.2e}",
        state.converged,
        state.iterations,
        state.final_metric().unwrap_or(f64::NAN)
    );

    let (_, result) = postprocess(&model, &state)?;
    let reference = Reference::from(&TruthDocument::new(&truth, seed, config.grid_size));
    let m = evaluate(&result, &reference)?;
    println!("eigenvalues    {:?}", result.eigenvalues);
    println!("noise variance {:.4}", result.noise_variance());
    println!("ISE mean       {:.4}", m.ise_mean);
    for (l, e) in m.ise_eigenfunctions.iter().enumerate() {
        println!("ISE psi_{}      {e:.4}", l + 1);
    }
    Ok(())
}
