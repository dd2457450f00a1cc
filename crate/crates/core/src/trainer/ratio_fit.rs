//! Fitting an unconditioned ratio estimator between two sample banks.
//!
//! This is the ratio half of the alternating scheme on its own: the
//! distributions are fixed and only the estimator moves. Useful for checking
//! an estimator against a known ratio.

use serde::{Deserialize, Serialize};

use super::{checked_grads, optimizer_step, term, Moments, Optimizer, TrainError};
use crate::distributions::SampleBank;
use crate::divergences::{bound_from_log_ratios, FDivergence, LOG_RATIO_CLAMP};
use crate::models::RatioEstimator;
use crate::rng::Stream;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioFitConfig {
    /// Bound maximized during fitting.
    pub objective: FDivergence,
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for RatioFitConfig {
    fn default() -> Self {
        Self {
            objective: FDivergence::Gan,
            steps: 4000,
            batch: 512,
            lr: 2e-3,
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

/// Trains `estimator` so that `log r ≈ log q − log p`, with `q` sampled from
/// `numerator` and `p` from `denominator`. Returns the bound value per step.
pub fn fit_ratio(
    estimator: &mut RatioEstimator,
    numerator: &SampleBank,
    denominator: &SampleBank,
    cfg: &RatioFitConfig,
) -> Result<Vec<f64>, TrainError> {
    if !estimator.ignore_conditioning {
        return Err(TrainError::Config("fit_ratio needs an estimator that ignores conditioning".into()));
    }
    for (what, bank) in [("numerator bank", numerator), ("denominator bank", denominator)] {
        if bank.dim() != estimator.primary_dim {
            return Err(TrainError::DataShape {
                what,
                expected: estimator.primary_dim,
                found: bank.dim(),
            });
        }
    }
    if cfg.steps == 0 || cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(TrainError::Config("steps, batch and lr must be positive".into()));
    }
    let mut sq = Stream::new(cfg.seed, 1);
    let mut sp = Stream::new(cfg.seed, 2);
    let mut moments = Moments::new(&estimator.params);
    let mut trace = Vec::with_capacity(cfg.steps as usize);
    for step in 1..=cfg.steps {
        let q = numerator.draw_minibatch(cfg.batch, &mut sq);
        let p = denominator.draw_minibatch(cfg.batch, &mut sp);
        let g = Graph::new();
        let r = estimator.bind(&g, true);
        let bound = term(step, "ratio bound", {
            let s_q = r.log_ratio_unconditioned(g.constant(q))?.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)?;
            let s_p = r.log_ratio_unconditioned(g.constant(p))?.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)?;
            bound_from_log_ratios(cfg.objective, s_q, s_p)
        })?;
        let grads = term(step, "ratio bound", bound.neg().and_then(|l| g.backward(l)))?;
        let grads = checked_grads(step, "ratio gradient", r.params.grads(&grads))?;
        optimizer_step(cfg.optimizer, &mut estimator.params, &grads, &mut moments, cfg.lr)?;
        trace.push(bound.item());
    }
    Ok(trace)
}

/// Monte Carlo estimate of the KL lower bound `E_q[log r + 1] − E_p[r]` with
/// its standard error, from per-sample log-ratios on each side.
pub fn kl_bound_estimate(log_r_q: &Tensor, log_r_p: &Tensor) -> (f64, f64) {
    let stats = |v: &mut dyn Iterator<Item = f64>| {
        let xs: Vec<f64> = v.collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var / n)
    };
    let clamp = |s: f64| s.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
    let (mq, vq) = stats(&mut log_r_q.data().iter().map(|&s| clamp(s) + 1.0));
    let (mp, vp) = stats(&mut log_r_p.data().iter().map(|&s| clamp(s).exp()));
    (mq - mp, (vq + vp).sqrt())
}
