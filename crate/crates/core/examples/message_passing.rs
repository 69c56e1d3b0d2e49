//! Drive the sweeps by hand and watch the convergence metric, with and
//! without the rotation step.

use vmp_fpca::orchestrator::convergence_metric;
use vmp_fpca::simulate::{generate, SimConfig};
use vmp_fpca::{FitConfig, Model};

fn main() -> vmp_fpca::Result<()> {
    let (data, _) = generate(&SimConfig::default())?;
    for rotation_step in [true, false] {
        let config = FitConfig {
            rotation_step,
            max_iter: 2000,
            ..FitConfig::default()
        };
        let model = Model::new(&data, &config)?;
        if rotation_step {
            println!("{} nodes, {} factors", model.graph.nodes().len(), model.graph.factors().len());
        }
        let mut state = model.initialize()?;
        let mut prev = model.snapshot(&state.store)?;
        let mut sweeps = 0;
        loop {
            model.sweep(&mut state.store)?;
            sweeps += 1;
            let curr = model.snapshot(&state.store)?;
            let metric = convergence_metric(&prev, &curr);
            prev = curr;
            if sweeps % 100 == 0 {
                println!("rotation {rotation_step}: sweep {sweeps:4}, metric {metric:.3e}");
            }
            if metric < config.tol || sweeps == config.max_iter {
                println!("rotation {rotation_step}: stopped after {sweeps} sweeps, metric {metric:.3e}");
                break;
            }
        }
    }
    Ok(())
}
