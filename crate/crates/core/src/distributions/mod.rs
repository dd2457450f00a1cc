//! Prescribed conditionals, implicit distributions as sample banks, and the
//! banana-shaped prior.
//!
//! A prescribed conditional here is a location-scale family: a sample is
//! `mean + scale * noise` with noise from the standard base density, and the
//! log-density is available in closed form. The mean comes from a network in
//! [`crate::models`]; this module only handles the location-scale part.

mod banana;
mod bank;

pub use banana::{
    banana_log_density, banana_log_density_at, banana_sample, banana_transform, correlated_normal,
    inverse_banana_transform,
};
pub use bank::{standard_normal_bank, SampleBank};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;
use crate::tensor::{Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum DistributionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sample bank is empty")]
    EmptyBank,
    #[error("correlation must lie strictly inside (-1, 1), got {0}")]
    BadCorrelation(f64),
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error("row {row}: {detail}")]
    Parse { row: usize, detail: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Base density of a location-scale conditional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Laplace,
}

impl Family {
    /// The ℓρ reconstruction norm this family degenerates to.
    pub fn norm_order(self) -> u32 {
        match self {
            Family::Gaussian => 2,
            Family::Laplace => 1,
        }
    }

    pub fn from_norm_order(rho: u32) -> Option<Self> {
        match rho {
            2 => Some(Family::Gaussian),
            1 => Some(Family::Laplace),
            _ => None,
        }
    }

    /// Standard base noise. Laplace noise is drawn by inverting the CDF of a
    /// uniform variate.
    pub fn sample_noise(self, stream: &mut Stream, rows: usize, cols: usize) -> Tensor {
        match self {
            Family::Gaussian => stream.normal_tensor(rows, cols),
            Family::Laplace => {
                let data = (0..rows * cols)
                    .map(|_| {
                        let u = stream.uniform_open() - 0.5;
                        -u.signum() * (1.0 - 2.0 * u.abs()).ln()
                    })
                    .collect();
                Tensor::matrix(rows, cols, data).expect("rows * cols")
            }
        }
    }

    /// log-density of a `dim`-dimensional sample sitting exactly at the mean.
    pub fn log_prob_at_mean(self, dim: usize, scale: f64) -> f64 {
        let d = dim as f64;
        match self {
            Family::Gaussian => -0.5 * d * (2.0 * PI * scale * scale).ln(),
            Family::Laplace => -d * (2.0 * scale).ln(),
        }
    }

    pub fn entropy(self, dim: usize, scale: f64) -> f64 {
        let d = dim as f64;
        match self {
            Family::Gaussian => 0.5 * d * (1.0 + (2.0 * PI * scale * scale).ln()),
            Family::Laplace => d * (1.0 + (2.0 * scale).ln()),
        }
    }

    /// `(γ, δ)` such that `−log p(v | m, scale) = γ‖v − m‖ρ^ρ + δ`.
    pub fn degenerate_constants(self, dim: usize, scale: f64) -> (f64, f64) {
        let d = dim as f64;
        match self {
            Family::Gaussian => {
                let gamma = 1.0 / (2.0 * scale * scale);
                (gamma, 0.5 * d * (PI / gamma).ln())
            }
            Family::Laplace => (1.0 / scale, d * (2.0 * scale).ln()),
        }
    }
}

/// Scale of a conditional as seen on a graph.
#[derive(Clone, Copy, Debug)]
pub enum ScaleVar<'g> {
    /// A constant scale; zero is allowed for sampling (the degenerate limit).
    Fixed(f64),
    /// A trainable log-scale, shape `[]`.
    Log(Var<'g>),
}

/// Location-scale conditional with a given base family.
#[derive(Clone, Copy, Debug)]
pub struct LocationScale<'g> {
    pub family: Family,
    pub scale: ScaleVar<'g>,
}

impl<'g> LocationScale<'g> {
    pub fn fixed(family: Family, scale: f64) -> Self {
        Self {
            family,
            scale: ScaleVar::Fixed(scale),
        }
    }

    /// `mean + scale * noise`. A fixed zero scale returns `mean` itself.
    pub fn rsample(&self, mean: Var<'g>, noise: Var<'g>) -> Result<Var<'g>, TensorError> {
        let (ms, ns) = (mean.shape(), noise.shape());
        if ms != ns {
            return Err(TensorError::Shape {
                op: "rsample",
                lhs: ms,
                rhs: ns,
            });
        }
        match self.scale {
            ScaleVar::Fixed(0.0) => Ok(mean),
            ScaleVar::Fixed(s) => mean.add(noise.scale(s)?),
            ScaleVar::Log(log_s) => mean.add(noise.mul(log_s.exp()?)?),
        }
    }

    /// Per-row log-density of `value` under the conditional centred at `mean`,
    /// shape `[n]`.
    pub fn log_prob(&self, mean: Var<'g>, value: Var<'g>) -> Result<Var<'g>, TensorError> {
        let (ms, vs) = (mean.shape(), value.shape());
        if ms != vs || ms.len() != 2 {
            return Err(TensorError::Shape {
                op: "log_prob",
                lhs: ms,
                rhs: vs,
            });
        }
        let dim = ms[1] as f64;
        let resid = value.sub(mean)?;
        match (self.family, self.scale) {
            (_, ScaleVar::Fixed(s)) if !(s > 0.0) => Err(TensorError::Domain {
                op: "log_prob",
                detail: format!("scale {s} is not positive"),
            }),
            (Family::Gaussian, ScaleVar::Fixed(s)) => resid
                .square()?
                .sum_rows()?
                .scale(-1.0 / (2.0 * s * s))?
                .add_scalar(-0.5 * dim * (2.0 * PI * s * s).ln()),
            (Family::Laplace, ScaleVar::Fixed(s)) => resid
                .abs()?
                .sum_rows()?
                .scale(-1.0 / s)?
                .add_scalar(-dim * (2.0 * s).ln()),
            (Family::Gaussian, ScaleVar::Log(log_s)) => {
                let inv_var = log_s.scale(-2.0)?.exp()?;
                resid
                    .square()?
                    .sum_rows()?
                    .mul(inv_var)?
                    .scale(-0.5)?
                    .sub(log_s.scale(dim)?)?
                    .add_scalar(-0.5 * dim * (2.0 * PI).ln())
            }
            (Family::Laplace, ScaleVar::Log(log_s)) => {
                let inv = log_s.neg()?.exp()?;
                resid
                    .abs()?
                    .sum_rows()?
                    .mul(inv)?
                    .neg()?
                    .sub(log_s.scale(dim)?)?
                    .add_scalar(-dim * 2f64.ln())
            }
        }
    }
}
