use std::f64::consts::PI;

use crate::rng::{ids, Stream};
use crate::tensor::{Tensor, TensorError, Var};

use super::{DistributionError, SampleBank};

fn check_rho(rho: f64) -> Result<(), DistributionError> {
    if rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(DistributionError::BadCorrelation(rho))
    }
}

/// `n` draws from a bivariate normal with unit variances and correlation
/// `rho`, via the Cholesky factor of `[[1, ρ], [ρ, 1]]`.
pub fn correlated_normal(n: usize, rho: f64, stream: &mut Stream) -> Result<Tensor, DistributionError> {
    check_rho(rho)?;
    let c = (1.0 - rho * rho).sqrt();
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let n1 = stream.standard_normal();
        let n2 = stream.standard_normal();
        data.push(n1);
        data.push(rho * n1 + c * n2);
    }
    Ok(Tensor::matrix(n, 2, data)?)
}

/// `H(g) = [g1, g2 − g1² − 1]`, applied row-wise.
pub fn banana_transform(g: &Tensor) -> Tensor {
    shear(g, -1.0)
}

/// `H⁻¹(u) = [u1, u2 + u1² + 1]`, applied row-wise.
pub fn inverse_banana_transform(z: &Tensor) -> Tensor {
    shear(z, 1.0)
}

fn shear(t: &Tensor, sign: f64) -> Tensor {
    assert_eq!(t.cols(), 2, "banana shear needs two columns");
    let mut out = t.clone();
    for row in out.data_mut().chunks_exact_mut(2) {
        row[1] += sign * (row[0] * row[0] + 1.0);
    }
    out
}

/// A bank of `n` banana-distributed points drawn on the prior-bank stream of `seed`.
pub fn banana_sample(n: usize, rho: f64, seed: u64) -> Result<SampleBank, DistributionError> {
    let mut stream = Stream::new(seed, ids::PRIOR_BANK);
    let g = correlated_normal(n, rho, &mut stream)?;
    SampleBank::new(banana_transform(&g), seed)
}

/// Per-row log-density of the banana distribution, shape `[n]`. The shear has
/// unit Jacobian, so this is the correlated normal density at `H⁻¹(z)`.
pub fn banana_log_density<'g>(z: Var<'g>, rho: f64) -> Result<Var<'g>, DistributionError> {
    check_rho(rho)?;
    let shape = z.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(TensorError::Shape {
            op: "banana_log_density",
            lhs: shape,
            rhs: vec![0, 2],
        }
        .into());
    }
    let one_m = 1.0 - rho * rho;
    let u1 = z.slice_cols(0, 1)?;
    let u2 = z.slice_cols(1, 2)?.add(u1.square()?)?.add_scalar(1.0)?;
    // g1² − 2ρ g1 g2 + g2²
    let quad = u1
        .square()?
        .add(u2.square()?)?
        .sub(u1.mul(u2)?.scale(2.0 * rho)?)?
        .sum_rows()?;
    let log_norm = -(2.0 * PI * one_m.sqrt()).ln();
    Ok(quad.scale(-0.5 / one_m)?.add_scalar(log_norm)?)
}

/// Scalar form of [`banana_log_density`] for a single point.
pub fn banana_log_density_at(z: [f64; 2], rho: f64) -> f64 {
    let one_m = 1.0 - rho * rho;
    let (g1, g2) = (z[0], z[1] + z[0] * z[0] + 1.0);
    let quad = g1 * g1 - 2.0 * rho * g1 * g2 + g2 * g2;
    -0.5 * quad / one_m - (2.0 * PI * one_m.sqrt()).ln()
}
