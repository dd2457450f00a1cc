//! Alternating ratio/model optimization, checkpoints and metric logging.
//!
//! A step of the adversarial modes first takes `ratio_steps` ascent steps on
//! the ratio-fitting objectives of α and β, then one descent step on θ and φ.
//! The last ratio step and the model step share a minibatch and its samples.

mod checkpoint;
mod config;
mod metrics;
mod optim;
mod ratio_fit;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{Architecture, Mode, PriorDensity, TrainConfig};
pub use metrics::{read_metrics, write_metrics, MetricRow, METRIC_COLUMNS};
pub use optim::{optimizer_step, Moments, Optimizer};
pub use ratio_fit::{fit_ratio, kl_bound_estimate, RatioFitConfig};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{banana_log_density, DistributionError, SampleBank};
use crate::divergences::{dre_bound_latent, dre_bound_observed};
use crate::models::{BoundConditional, Conditional, Ilvm, MlpSpec, ModelError, RatioEstimator, ScaleMode};
use crate::objectives::{
    dm_latent_at, dm_observed_at, likelihood_sample, nell_at, nelp_at, posterior_sample, reconstruction_loss,
};
use crate::rng::{ids, Stream, StreamCursor};
use crate::tensor::{Gradients, Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value at step {step} in {term}")]
    NonFinite { step: u64, term: &'static str },
    #[error("{param} gradient tensors expected, got {grads}", param = .params)]
    GradientCount { params: usize, grads: usize },
    #[error("gradient shape {grad:?} does not match parameter shape {param:?}")]
    GradientShape { param: Vec<usize>, grad: Vec<usize> },
    #[error("{what} has width {found}, expected {expected}")]
    DataShape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("mode {0:?} needs a prior sample bank")]
    MissingPrior(Mode),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Moment buffers for the four parameter groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMoments {
    pub theta: Moments,
    pub phi: Moments,
    pub alpha: Option<Moments>,
    pub beta: Option<Moments>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamCursors {
    pub data: StreamCursor,
    pub prior: StreamCursor,
    pub posterior_noise: StreamCursor,
    pub likelihood_noise: StreamCursor,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: Ilvm,
    pub moments: GroupMoments,
    pub step: u64,
    pub cursors: StreamCursors,
}

fn mix_seed(seed: u64, k: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mapping_spec(cfg: &TrainConfig, input: usize, output: usize, seed: u64) -> MlpSpec {
    let arch = &cfg.architecture;
    if arch.linear {
        return MlpSpec::linear(input, output, seed);
    }
    let mut widths = vec![input];
    widths.extend_from_slice(&arch.mapping_hidden);
    widths.push(output);
    MlpSpec::new(widths, arch.mapping_activation, seed)
}

impl TrainState {
    /// Fresh parameters and cursors for data of width `data_dim`.
    pub fn init(cfg: &TrainConfig, data_dim: usize) -> Result<Self, TrainError> {
        cfg.validate()?;
        let k = cfg.latent_dim;
        let scale = |s: f64| if cfg.learn_scales { ScaleMode::Learned(s) } else { ScaleMode::Fixed(s) };
        let family = cfg.family();
        let generative = Conditional::new(mapping_spec(cfg, k, data_dim, mix_seed(cfg.seed, 0)), family, scale(cfg.tau))?;
        let recognition = Conditional::new(mapping_spec(cfg, data_dim, k, mix_seed(cfg.seed, 1)), family, scale(cfg.t))?;
        let (latent_ratio, observed_ratio) = match cfg.mode {
            Mode::VaeBaseline => (None, None),
            Mode::Sjmvi | Mode::Cyclegan => {
                let ignore = cfg.mode == Mode::Cyclegan;
                let arch = &cfg.architecture;
                let a = RatioEstimator::new(k, data_dim, &arch.ratio_hidden, arch.ratio_activation, ignore, mix_seed(cfg.seed, 2))?;
                let b = RatioEstimator::new(data_dim, k, &arch.ratio_hidden, arch.ratio_activation, ignore, mix_seed(cfg.seed, 3))?;
                (Some(a), Some(b))
            }
        };
        let moments = GroupMoments {
            theta: Moments::new(&generative.params),
            phi: Moments::new(&recognition.params),
            alpha: latent_ratio.as_ref().map(|r| Moments::new(&r.params)),
            beta: observed_ratio.as_ref().map(|r| Moments::new(&r.params)),
        };
        let streams = Streams::new(cfg.seed);
        Ok(Self {
            model: Ilvm {
                generative,
                recognition,
                latent_ratio,
                observed_ratio,
            },
            moments,
            step: 0,
            cursors: streams.cursors(),
        })
    }
}

struct Streams {
    data: Stream,
    prior: Stream,
    posterior_noise: Stream,
    likelihood_noise: Stream,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            data: Stream::new(seed, ids::DATA),
            prior: Stream::new(seed, ids::PRIOR),
            posterior_noise: Stream::new(seed, ids::POSTERIOR_NOISE),
            likelihood_noise: Stream::new(seed, ids::LIKELIHOOD_NOISE),
        }
    }

    fn restore(c: &StreamCursors) -> Result<Self, TrainError> {
        let r = |c: &StreamCursor| Stream::restore(c).map_err(|e| TrainError::Corrupt(format!("stream cursor: {e}")));
        Ok(Self {
            data: r(&c.data)?,
            prior: r(&c.prior)?,
            posterior_noise: r(&c.posterior_noise)?,
            likelihood_noise: r(&c.likelihood_noise)?,
        })
    }

    fn cursors(&self) -> StreamCursors {
        StreamCursors {
            data: self.data.cursor(),
            prior: self.prior.cursor(),
            posterior_noise: self.posterior_noise.cursor(),
            likelihood_noise: self.likelihood_noise.cursor(),
        }
    }
}

/// One minibatch and its base noise.
struct Draws {
    x: Tensor,
    z: Option<Tensor>,
    eps: Option<Tensor>,
    xi: Option<Tensor>,
}

fn term<T>(step: u64, name: &'static str, r: Result<T, TensorError>) -> Result<T, TrainError> {
    r.map_err(|e| match e {
        TensorError::NonFinite { .. } => TrainError::NonFinite { step, term: name },
        other => TrainError::Tensor(other),
    })
}

fn checked_grads(step: u64, name: &'static str, grads: Vec<Tensor>) -> Result<Vec<Tensor>, TrainError> {
    if grads.iter().any(|g| g.first_non_finite().is_some()) {
        return Err(TrainError::NonFinite { step, term: name });
    }
    Ok(grads)
}

fn opt_var<'g>(g: &'g Graph, t: &Option<Tensor>) -> Option<Var<'g>> {
    t.as_ref().map(|t| g.constant(t.clone()))
}

pub struct Trainer {
    config: TrainConfig,
    data: SampleBank,
    prior: Option<SampleBank>,
    state: TrainState,
    streams: Streams,
}

impl Trainer {
    /// A trainer at step 0. `prior` is required by the adversarial modes.
    pub fn new(config: TrainConfig, data: SampleBank, prior: Option<SampleBank>) -> Result<Self, TrainError> {
        let state = TrainState::init(&config, data.dim())?;
        Self::resume(config, data, prior, state)
    }

    /// Continues from a saved state, including its stream positions.
    pub fn resume(config: TrainConfig, data: SampleBank, prior: Option<SampleBank>, state: TrainState) -> Result<Self, TrainError> {
        config.validate()?;
        let d = state.model.observed_dim();
        let k = state.model.latent_dim();
        if data.dim() != d {
            return Err(TrainError::DataShape {
                what: "data bank",
                expected: d,
                found: data.dim(),
            });
        }
        match (&prior, config.mode) {
            (None, Mode::Sjmvi | Mode::Cyclegan) => return Err(TrainError::MissingPrior(config.mode)),
            (Some(p), _) if p.dim() != k => {
                return Err(TrainError::DataShape {
                    what: "prior bank",
                    expected: k,
                    found: p.dim(),
                })
            }
            _ => {}
        }
        let streams = Streams::restore(&state.cursors)?;
        Ok(Self {
            config,
            data,
            prior,
            state,
            streams,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Ilvm {
        &self.state.model
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    /// Snapshot including current stream positions.
    pub fn state(&self) -> TrainState {
        let mut s = self.state.clone();
        s.cursors = self.streams.cursors();
        s
    }

    pub fn into_state(self) -> TrainState {
        self.state()
    }

    /// Runs `steps` more steps, returning the rows logged along the way.
    pub fn run(&mut self, steps: u64) -> Result<Vec<MetricRow>, TrainError> {
        let mut rows = Vec::new();
        for _ in 0..steps {
            if let Some(r) = self.step()? {
                rows.push(r);
            }
        }
        Ok(rows)
    }

    /// One full step; returns a row when the step lands on the log interval.
    pub fn step(&mut self) -> Result<Option<MetricRow>, TrainError> {
        let step = self.state.step + 1;
        let row = match self.config.mode {
            Mode::VaeBaseline => self.vae_step(step)?,
            Mode::Sjmvi | Mode::Cyclegan => self.adversarial_step(step)?,
        };
        self.state.step = step;
        Ok(step.is_multiple_of(self.config.log_interval).then_some(row))
    }

    fn draw(&mut self, with_prior: bool) -> Draws {
        let n = self.config.batch;
        let (d, k) = (self.data.dim(), self.config.latent_dim);
        let x = self.data.draw_minibatch(n, &mut self.streams.data);
        let z = match (&self.prior, with_prior) {
            (Some(p), true) => Some(p.draw_minibatch(n, &mut self.streams.prior)),
            _ => None,
        };
        let family = self.config.family();
        let stochastic = self.config.mode != Mode::Cyclegan;
        let eps = stochastic.then(|| family.sample_noise(&mut self.streams.posterior_noise, n, k));
        let xi = (stochastic && with_prior).then(|| family.sample_noise(&mut self.streams.likelihood_noise, n, d));
        Draws { x, z, eps, xi }
    }

    /// Ascent on both ratio-fitting objectives from fixed samples.
    fn ratio_update(&mut self, step: u64, x: &Tensor, z: &Tensor, z_post: &Tensor, x_model: &Tensor) -> Result<(f64, f64), TrainError> {
        let cfg = &self.config;
        let model = &mut self.state.model;
        let (alpha_net, beta_net) = match (&mut model.latent_ratio, &mut model.observed_ratio) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(TrainError::Config("adversarial mode without ratio networks".into())),
        };
        let g = Graph::new();
        let alpha = alpha_net.bind(&g, true);
        let beta = beta_net.bind(&g, true);
        let (xv, zv) = (g.constant(x.clone()), g.constant(z.clone()));
        let (zp, xm) = (g.constant(z_post.clone()), g.constant(x_model.clone()));
        let fdiv = cfg.dre_objective;
        let lat = term(step, "dre_latent", dre_bound_latent(fdiv, |z, x| alpha.log_ratio(z, x), xv, zp, zv))?;
        let obs = term(step, "dre_observed", dre_bound_observed(fdiv, |x, z| beta.log_ratio(x, z), zv, xm, xv))?;
        let loss = term(step, "dre", lat.add(obs).and_then(|v| v.neg()))?;
        let grads = term(step, "dre", g.backward(loss))?;
        let ga = checked_grads(step, "dre_latent gradient", alpha.params.grads(&grads))?;
        let gb = checked_grads(step, "dre_observed gradient", beta.params.grads(&grads))?;
        let moments = &mut self.state.moments;
        let (ma, mb) = (moments.alpha.as_mut(), moments.beta.as_mut());
        let (ma, mb) = ma.zip(mb).ok_or_else(|| TrainError::Corrupt("missing ratio moments".into()))?;
        optimizer_step(cfg.optimizer, &mut alpha_net.params, &ga, ma, cfg.lr_ratio)?;
        optimizer_step(cfg.optimizer, &mut beta_net.params, &gb, mb, cfg.lr_ratio)?;
        Ok((lat.item(), obs.item()))
    }

    /// Posterior and likelihood draws as plain values.
    fn sample_values(&self, d: &Draws) -> Result<(Tensor, Tensor), TensorError> {
        let g = Graph::new();
        let theta = self.state.model.generative.bind(&g, false);
        let phi = self.state.model.recognition.bind(&g, false);
        let z = d.z.as_ref().expect("adversarial draws carry prior samples");
        let zp = posterior_sample(&phi, g.constant(d.x.clone()), opt_var(&g, &d.eps))?;
        let xm = likelihood_sample(&theta, g.constant(z.clone()), opt_var(&g, &d.xi))?;
        Ok((zp.value(), xm.value()))
    }

    fn adversarial_step(&mut self, step: u64) -> Result<MetricRow, TrainError> {
        for _ in 1..self.config.ratio_steps {
            let d = self.draw(true);
            let (zp, xm) = term(step, "samples", self.sample_values(&d))?;
            self.ratio_update(step, &d.x, d.z.as_ref().expect("prior draws"), &zp, &xm)?;
        }
        let d = self.draw(true);
        let z = d.z.clone().expect("prior draws");
        let cfg = self.config.clone();
        let g = Graph::new();
        let theta = self.state.model.generative.bind(&g, true);
        let phi = self.state.model.recognition.bind(&g, true);
        let (xv, zv) = (g.constant(d.x.clone()), g.constant(z.clone()));
        let z_post = term(step, "posterior sample", posterior_sample(&phi, xv, opt_var(&g, &d.eps)))?;
        let x_model = term(step, "likelihood sample", likelihood_sample(&theta, zv, opt_var(&g, &d.xi)))?;

        let (dre_l, dre_o) = self.ratio_update(step, &d.x, &z, &z_post.value(), &x_model.value())?;

        let model = &self.state.model;
        let alpha = model.latent_ratio.as_ref().expect("ratio nets").bind(&g, false);
        let beta = model.observed_ratio.as_ref().expect("ratio nets").bind(&g, false);
        let dm_l = term(step, "dm_latent", dm_latent_at(cfg.dm_loss, &alpha, xv, z_post))?;
        let dm_o = term(step, "dm_observed", dm_observed_at(cfg.dm_loss, &beta, zv, x_model))?;
        let (lik, post) = match cfg.mode {
            Mode::Cyclegan => {
                let (gamma1, _) = cfg.family().degenerate_constants(model.observed_dim(), cfg.tau);
                let (gamma2, _) = cfg.family().degenerate_constants(model.latent_dim(), cfg.t);
                let rev = term(
                    step,
                    "cycle_reverse",
                    theta.mean(z_post).and_then(|m| reconstruction_loss(xv, m, cfg.norm_order)?.scale(gamma1)),
                )?;
                let fwd = term(
                    step,
                    "cycle_forward",
                    phi.mean(x_model).and_then(|m| reconstruction_loss(zv, m, cfg.norm_order)?.scale(gamma2)),
                )?;
                (rev, fwd)
            }
            _ => (
                term(step, "nell", nell_at(&theta, xv, z_post))?,
                term(step, "nelp", nelp_at(&phi, zv, x_model))?,
            ),
        };
        let [w1, w2] = cfg.loss_weights;
        let total = term(
            step,
            "total",
            lik.add(dm_l)
                .and_then(|a| a.scale(w1))
                .and_then(|a| a.add(post.add(dm_o)?.scale(w2)?)),
        )?;
        let grads = term(step, "total", g.backward(total))?;
        self.apply_model_update(step, &theta, &phi, &grads)?;
        Ok(MetricRow {
            step,
            nell: Some(lik.item()),
            nelp: Some(post.item()),
            dre_latent: Some(dre_l),
            dre_observed: Some(dre_o),
            dm_latent: Some(dm_l.item()),
            dm_observed: Some(dm_o.item()),
            total: Some(total.item()),
        })
    }

    fn apply_model_update(&mut self, step: u64, theta: &BoundConditional<'_>, phi: &BoundConditional<'_>, grads: &Gradients) -> Result<(), TrainError> {
        let gt = checked_grads(step, "model gradient", theta.params.grads(grads))?;
        let gp = checked_grads(step, "model gradient", phi.params.grads(grads))?;
        let cfg = &self.config;
        let model = &mut self.state.model;
        let m = &mut self.state.moments;
        optimizer_step(cfg.optimizer, &mut model.generative.params, &gt, &mut m.theta, cfg.lr_model)?;
        optimizer_step(cfg.optimizer, &mut model.recognition.params, &gp, &mut m.phi, cfg.lr_model)?;
        Ok(())
    }

    fn vae_step(&mut self, step: u64) -> Result<MetricRow, TrainError> {
        let d = self.draw(false);
        let cfg = self.config.clone();
        let g = Graph::new();
        let theta = self.state.model.generative.bind(&g, true);
        let phi = self.state.model.recognition.bind(&g, true);
        let xv = g.constant(d.x.clone());
        let eps = g.constant(d.eps.clone().expect("stochastic draws"));
        let z = term(step, "posterior sample", phi.sample(xv, eps))?;
        let nell = term(step, "nell", nell_at(&theta, xv, z))?;
        let log_prior = match cfg.prior_density {
            PriorDensity::Banana { rho } => banana_log_density(z, rho).map_err(|e| match e {
                DistributionError::Tensor(t) => t,
                other => TensorError::Domain {
                    op: "prior density",
                    detail: other.to_string(),
                },
            }),
            PriorDensity::StandardNormal => standard_normal_log_density(z),
        };
        let log_prior = term(step, "prior density", log_prior)?;
        let kl = term(step, "kl", phi.log_prob(xv, z).and_then(|lq| lq.sub(log_prior)?.mean()))?;
        let total = term(step, "total", nell.add(kl).and_then(|v| v.scale(cfg.loss_weights[0])))?;
        let grads = term(step, "total", g.backward(total))?;
        self.apply_model_update(step, &theta, &phi, &grads)?;
        Ok(MetricRow {
            step,
            nell: Some(nell.item()),
            dm_latent: Some(kl.item()),
            total: Some(total.item()),
            ..Default::default()
        })
    }
}

fn standard_normal_log_density(z: Var<'_>) -> Result<Var<'_>, TensorError> {
    let k = z.shape()[1] as f64;
    z.square()?.sum_rows()?.scale(-0.5)?.add_scalar(-0.5 * k * (2.0 * PI).ln())
}

/// Trains from scratch for `config.steps` steps.
pub fn train(config: TrainConfig, data: SampleBank, prior: Option<SampleBank>) -> Result<(TrainState, Vec<MetricRow>), TrainError> {
    let steps = config.steps;
    let mut t = Trainer::new(config, data, prior)?;
    let rows = t.run(steps)?;
    Ok((t.into_state(), rows))
}

/// Per-dimension reconstruction errors `(mse_x, mse_z)` through the mean
/// mappings: `‖x − μ_θ(m_φ(x))‖² / D` and `‖z − m_φ(μ_θ(z))‖² / K`, averaged
/// over rows.
pub fn reconstruction_mse(model: &Ilvm, x: &Tensor, z: &Tensor) -> Result<(f64, f64), TensorError> {
    let mse = |a: &Tensor, b: &Tensor| {
        a.data().iter().zip(b.data()).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / a.len() as f64
    };
    Ok((mse(x, &model.reconstruct_x(x)?), mse(z, &model.reconstruct_z(z)?)))
}

#[cfg(test)]
mod tests;
