//! Moment and natural-parameter forms of the Gaussian and inverse-χ²
//! families, and the duplication-matrix link between the vec and vech bases.

use nalgebra::{dmatrix, dvector};
use vmp_fpca::expfam::{duplication_matrix, vech, GaussianVecParams, GaussianVechParams, InvChiSqParams};

fn main() -> vmp_fpca::Result<()> {
    let mean = dvector![1.0, -2.0];
    let cov = dmatrix![2.0, 0.5; 0.5, 1.0];

    let vec_form = GaussianVecParams::from_moments(&mean, &cov)?;
    println!("vec basis:  eta1 = {:?}", vec_form.eta1.as_slice());
    println!("            eta2 = {:?}", vec_form.eta2.as_slice());

    let vech_form = GaussianVechParams::from_moments(&mean, &cov)?;
    println!("vech basis: eta2 = {:?}", vech_form.eta2.as_slice());

    let back = vech_form.to_moments()?;
    println!("recovered mean {:?}, cov {:?}", back.mean.as_slice(), back.cov.as_slice());

    let d = duplication_matrix(2);
    println!("D_2 vech(Σ) = {:?}", (&d * vech(&cov)?).as_slice());

    // σ² with ξ = 4 degrees of freedom and scale λ = 2
    let chi = InvChiSqParams::from_shape_scale(4.0, 2.0);
    println!("inverse-chi-squared naturals ({}, {}), E(1/σ²) = {}", chi.eta1, chi.eta2, chi.mean_reciprocal()?);
    Ok(())
}
