//! The penalized spline basis: `[1, t, z_1(t) .. z_K(t)]` rows of the design
//! matrix on a few time points.

use vmp_fpca::splines::SplineBasis;

fn main() -> vmp_fpca::Result<()> {
    let basis = SplineBasis::new(6)?;
    println!("interior knots: {:?}", basis.interior_knots());

    let times = [0.0, 0.25, 0.5, 0.75, 1.0];
    let c = basis.design_matrix(&times)?;
    for (t, row) in times.iter().zip(c.row_iter()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:8.4}")).collect();
        println!("t = {t:4.2} | {}", cells.join(" "));
    }
    Ok(())
}
