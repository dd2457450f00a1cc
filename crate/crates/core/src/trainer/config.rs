use serde::{Deserialize, Serialize};

use crate::distributions::Family;
use crate::divergences::FDivergence;
use crate::models::Activation;
use crate::objectives::DmLoss;

use super::{Optimizer, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Symmetric joint matching: likelihood and posterior terms plus both
    /// divergence-minimization losses.
    Sjmvi,
    /// Mean mappings with cycle losses and unconditioned discriminators.
    Cyclegan,
    /// Negative ELBO against an analytic prior density; no ratio networks.
    VaeBaseline,
}

/// Analytic prior density used by the VAE baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PriorDensity {
    Banana { rho: f64 },
    StandardNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub mapping_hidden: Vec<usize>,
    pub mapping_activation: Activation,
    pub ratio_hidden: Vec<usize>,
    pub ratio_activation: Activation,
    /// Affine mean mappings (no hidden layers, no nonlinearity).
    pub linear: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            mapping_hidden: vec![256, 256],
            mapping_activation: Activation::Tanh,
            ratio_hidden: vec![128, 128],
            ratio_activation: Activation::Relu,
            linear: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub dm_loss: DmLoss,
    /// f setting of the ratio-fitting objective.
    pub dre_objective: FDivergence,
    pub steps: u64,
    pub batch: usize,
    pub lr_model: f64,
    pub lr_ratio: f64,
    pub optimizer: Optimizer,
    /// Ratio updates per model update.
    pub ratio_steps: usize,
    /// Likelihood scale τ.
    pub tau: f64,
    /// Posterior scale t.
    pub t: f64,
    pub learn_scales: bool,
    /// 2 for Gaussian conditionals and squared cycle losses, 1 for Laplace and ℓ1.
    pub norm_order: u32,
    pub latent_dim: usize,
    pub seed: u64,
    pub log_interval: u64,
    /// Weights of the likelihood-side and posterior-side halves of the target.
    pub loss_weights: [f64; 2],
    pub prior_density: PriorDensity,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sjmvi,
            dm_loss: DmLoss::C,
            dre_objective: FDivergence::Gan,
            steps: 20_000,
            batch: 64,
            lr_model: 1e-3,
            lr_ratio: 2e-4,
            optimizer: Optimizer::default(),
            ratio_steps: 1,
            tau: 0.1,
            t: 0.1,
            learn_scales: false,
            norm_order: 2,
            latent_dim: 2,
            seed: 0,
            log_interval: 100,
            loss_weights: [1.0, 1.0],
            prior_density: PriorDensity::Banana { rho: 0.95 },
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn family(&self) -> Family {
        Family::from_norm_order(self.norm_order).unwrap_or(Family::Gaussian)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.lr_model > 0.0) || !(self.lr_ratio > 0.0) {
            return bad(format!("learning rates must be positive, got {} and {}", self.lr_model, self.lr_ratio));
        }
        if self.ratio_steps == 0 {
            return bad("ratio_steps must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) || !(self.t > 0.0 && self.t.is_finite()) {
            return bad(format!("scales must be positive, got tau {} and t {}", self.tau, self.t));
        }
        if Family::from_norm_order(self.norm_order).is_none() {
            return bad(format!("norm_order must be 1 or 2, got {}", self.norm_order));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.log_interval == 0 {
            return bad("log_interval must be positive".into());
        }
        if self.loss_weights.iter().any(|w| !(*w >= 0.0)) {
            return bad(format!("loss weights must be nonnegative, got {:?}", self.loss_weights));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad(format!("invalid Adam settings β1 {beta1}, β2 {beta2}, ε {eps}"));
            }
        }
        if let PriorDensity::Banana { rho } = self.prior_density {
            if !(rho.abs() < 1.0) {
                return bad(format!("banana correlation must lie in (-1, 1), got {rho}"));
            }
            if self.mode == Mode::VaeBaseline && self.latent_dim != 2 {
                return bad("the banana prior is two-dimensional".into());
            }
        }
        if self.architecture.mapping_hidden.contains(&0) || self.architecture.ratio_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }
}
