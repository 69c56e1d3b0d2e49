//! Post-processing on a hand-made raw fit: the mixed eigenfunction matrix
//! becomes orthonormal, the scores uncorrelated, and the fitted curves stay
//! put.

use nalgebra::{DMatrix, DVector};
use vmp_fpca::postprocess::{orthogonalize, GridEvaluation};
use vmp_fpca::simulate::{true_eigenfunction, uniform_grid};

fn main() -> vmp_fpca::Result<()> {
    let grid = uniform_grid(501);
    // raw columns: ψ₁ + ψ₂ and 0.5ψ₁ − ψ₂, so the columns are neither orthogonal nor unit length
    let psi = DMatrix::from_fn(grid.len(), 2, |g, j| {
        let (a, b) = (true_eigenfunction(0, grid[g]), true_eigenfunction(1, grid[g]));
        if j == 0 { a + b } else { 0.5 * a - b }
    });
    let xi = DMatrix::from_row_slice(5, 2, &[1.0, 0.2, -0.4, 0.9, 0.3, -0.7, 1.5, 0.1, -0.6, -0.3]);
    let eval = GridEvaluation {
        mean: DVector::from_iterator(grid.len(), grid.iter().map(|t| t * t)),
        psi,
        xi,
        score_covs: vec![DMatrix::identity(2, 2) * 0.01; 5],
        grid,
        recip_sigsq_eps: 4.0,
    };
    let fit = orthogonalize(&eval)?;
    println!("eigenvalues {:?}", fit.eigenvalues);
    println!("largest change in fitted curves {:.2e}", (eval.fitted_curves() - fit.fitted_curves()).amax());
    println!("scores:\n{}", fit.scores);
    Ok(())
}
