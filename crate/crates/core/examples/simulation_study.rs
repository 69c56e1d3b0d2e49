//! A small replicate study: ISE medians across sample sizes.
//!
//! `cargo run --release --example simulation_study -- [replicates]`

use vmp_fpca::cli::study;
use vmp_fpca::FitConfig;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
}

fn main() {
    let replicates = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let sizes = [10, 50, 100];
    let rows = study(&FitConfig::default(), &sizes, replicates, 1);
    println!("   n   median ISE(mu)  median ISE(psi1)  median ISE(psi2)");
    for &n in &sizes {
        let ok: Vec<_> = rows
            .iter()
            .filter(|(m, _, _)| *m == n)
            .filter_map(|(_, _, r)| r.as_ref().ok())
            .collect();
        let col = |f: &dyn Fn(&vmp_fpca::io::Metrics) -> f64| median(ok.iter().map(|r| f(&r.metrics)).collect());
        println!(
            "{n:4}   {:14.4}  {:16.4}  {:16.4}",
            col(&|m| m.ise_mean),
            col(&|m| m.ise_eigenfunctions[0]),
            col(&|m| m.ise_eigenfunctions[1])
        );
    }
}
