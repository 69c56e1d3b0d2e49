//! Round trip a dataset through CSV, fit it, and write the fit JSON,
//! manifest and long-format curve export into a temporary directory.

use std::fs::File;

use vmp_fpca::io::{read_dataset_file, write_curves, write_dataset_file, write_json, FitDocument, RunManifest};
use vmp_fpca::simulate::{generate, SimConfig};
use vmp_fpca::{fit, postprocess, FitConfig};

fn main() -> vmp_fpca::Result<()> {
    let dir = std::env::temp_dir().join("vmp-fpca-example");
    std::fs::create_dir_all(&dir)?;

    let (data, _) = generate(&SimConfig::with_curves(20, 3))?;
    let csv_path = dir.join("data.csv");
    write_dataset_file(&csv_path, &data)?;
    let reread = read_dataset_file(&csv_path)?;
    println!("CSV round trip identical: {}", reread == data);

    let config = FitConfig::default();
    let (model, state) = fit(&reread, &config)?;
    let (_, result) = postprocess(&model, &state)?;

    let manifest = RunManifest {
        input: Some(csv_path.display().to_string()),
        iterations: state.iterations,
        converged: state.converged,
        final_metric: state.final_metric(),
        ..RunManifest::new(&config)
    };
    let ids: Vec<String> = reread.curves.iter().map(|c| c.id.clone()).collect();
    write_json(&dir.join("fit.json"), &FitDocument::new(&result, ids.clone(), manifest)?)?;
    write_curves(File::create(dir.join("curves.csv"))?, &result, &ids, None)?;
    println!("wrote data.csv, fit.json and curves.csv to {}", dir.display());
    Ok(())
}
