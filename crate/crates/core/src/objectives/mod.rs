//! Every loss as a pure function of bound parameter groups and minibatches.
//!
//! Naming follows the parameter roles: θ is the generative conditional, φ the
//! recognition conditional, α the latent log-ratio estimator and β the
//! observed one. Noise tensors of `None` mean the deterministic mapping (the
//! mean network alone).
//!
//! Ratio-fitting objectives detach the model samples they consume, and
//! divergence-minimization losses freeze the ratio parameters, so each loss
//! only reaches the group it is meant to train.

use serde::Serialize;

use crate::divergences::{self, FDivergence, LOG_RATIO_CLAMP};
use crate::models::{
    log_discriminator, log_one_minus_discriminator, BoundConditional, BoundRatio,
};
use crate::tensor::{TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

fn clamp(s: Var<'_>) -> Result<Var<'_>> {
    s.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
}

fn draw<'g>(model: &BoundConditional<'g>, input: Var<'g>, noise: Option<Var<'g>>) -> Result<Var<'g>> {
    match noise {
        Some(n) => model.sample(input, n),
        None => model.mean(input),
    }
}

/// `G_φ(ε; x)`, or `m_φ(x)` without noise.
pub fn posterior_sample<'g>(phi: &BoundConditional<'g>, x: Var<'g>, eps: Option<Var<'g>>) -> Result<Var<'g>> {
    draw(phi, x, eps)
}

/// `F_θ(ξ; z)`, or `μ_θ(z)` without noise.
pub fn likelihood_sample<'g>(theta: &BoundConditional<'g>, z: Var<'g>, xi: Option<Var<'g>>) -> Result<Var<'g>> {
    draw(theta, z, xi)
}

/// Negative expected log-likelihood: mean of `−log p_θ(x | G_φ(ε; x))`.
pub fn nell<'g>(theta: &BoundConditional<'g>, phi: &BoundConditional<'g>, x: Var<'g>, eps: Option<Var<'g>>) -> Result<Var<'g>> {
    nell_at(theta, x, posterior_sample(phi, x, eps)?)
}

/// [`nell`] given the posterior draws `z_post`.
pub fn nell_at<'g>(theta: &BoundConditional<'g>, x: Var<'g>, z_post: Var<'g>) -> Result<Var<'g>> {
    theta.log_prob(z_post, x)?.mean()?.neg()
}

/// Negative expected log-posterior: mean of `−log q_φ(z | F_θ(ξ; z))`.
pub fn nelp<'g>(theta: &BoundConditional<'g>, phi: &BoundConditional<'g>, z: Var<'g>, xi: Option<Var<'g>>) -> Result<Var<'g>> {
    nelp_at(phi, z, likelihood_sample(theta, z, xi)?)
}

/// [`nelp`] given the likelihood draws `x_model`.
pub fn nelp_at<'g>(phi: &BoundConditional<'g>, z: Var<'g>, x_model: Var<'g>) -> Result<Var<'g>> {
    phi.log_prob(x_model, z)?.mean()?.neg()
}

/// Ratio-fitting lower bound for `r_α(z; x)` under any f setting. The
/// posterior draws are detached.
pub fn dre_latent<'g>(
    fdiv: FDivergence,
    alpha: &BoundRatio<'g>,
    phi: &BoundConditional<'g>,
    x: Var<'g>,
    eps: Option<Var<'g>>,
    z_prior: Var<'g>,
) -> Result<Var<'g>> {
    let z_post = posterior_sample(phi, x, eps)?.detach();
    divergences::dre_bound_latent(fdiv, |z, x| alpha.log_ratio(z, x), x, z_post, z_prior)
}

/// Ratio-fitting lower bound for `r_β(x; z)`. The likelihood draws are detached.
pub fn dre_observed<'g>(
    fdiv: FDivergence,
    beta: &BoundRatio<'g>,
    theta: &BoundConditional<'g>,
    z: Var<'g>,
    xi: Option<Var<'g>>,
    x_data: Var<'g>,
) -> Result<Var<'g>> {
    let x_model = likelihood_sample(theta, z, xi)?.detach();
    divergences::dre_bound_observed(fdiv, |x, z| beta.log_ratio(x, z), z, x_model, x_data)
}

pub fn kl_dre_latent<'g>(
    alpha: &BoundRatio<'g>,
    phi: &BoundConditional<'g>,
    x: Var<'g>,
    eps: Option<Var<'g>>,
    z_prior: Var<'g>,
) -> Result<Var<'g>> {
    dre_latent(FDivergence::Kl, alpha, phi, x, eps, z_prior)
}

pub fn kl_dre_observed<'g>(
    beta: &BoundRatio<'g>,
    theta: &BoundConditional<'g>,
    z: Var<'g>,
    xi: Option<Var<'g>>,
    x_data: Var<'g>,
) -> Result<Var<'g>> {
    dre_observed(FDivergence::Kl, beta, theta, z, xi, x_data)
}

/// Log-ratios of the frozen latent estimator on posterior draws, clamped.
fn latent_log_ratios<'g>(alpha: &BoundRatio<'g>, phi: &BoundConditional<'g>, x: Var<'g>, eps: Option<Var<'g>>) -> Result<Var<'g>> {
    let z = posterior_sample(phi, x, eps)?;
    clamp(alpha.frozen().log_ratio(z, x)?)
}

fn observed_log_ratios<'g>(beta: &BoundRatio<'g>, theta: &BoundConditional<'g>, z: Var<'g>, xi: Option<Var<'g>>) -> Result<Var<'g>> {
    let x = likelihood_sample(theta, z, xi)?;
    clamp(beta.frozen().log_ratio(x, z)?)
}

/// Latent DM loss given posterior draws `z_post` paired with `x`.
pub fn dm_latent_at<'g>(variant: DmLoss, alpha: &BoundRatio<'g>, x: Var<'g>, z_post: Var<'g>) -> Result<Var<'g>> {
    dm_from_log_ratios(variant, clamp(alpha.frozen().log_ratio(z_post, x)?)?)
}

/// Observed DM loss given likelihood draws `x_model` paired with `z`.
pub fn dm_observed_at<'g>(variant: DmLoss, beta: &BoundRatio<'g>, z: Var<'g>, x_model: Var<'g>) -> Result<Var<'g>> {
    dm_from_log_ratios(variant, clamp(beta.frozen().log_ratio(x_model, z)?)?)
}

/// `E_{q* q_φ}[log r_α(z; x)]` with α frozen.
pub fn kl_dm_latent<'g>(alpha: &BoundRatio<'g>, phi: &BoundConditional<'g>, x: Var<'g>, eps: Option<Var<'g>>) -> Result<Var<'g>> {
    latent_log_ratios(alpha, phi, x, eps)?.mean()
}

/// `E_{p* p_θ}[log r_β(x; z)]` with β frozen.
pub fn kl_dm_observed<'g>(beta: &BoundRatio<'g>, theta: &BoundConditional<'g>, z: Var<'g>, xi: Option<Var<'g>>) -> Result<Var<'g>> {
    observed_log_ratios(beta, theta, z, xi)?.mean()
}

/// Model-side losses built from a frozen discriminator `D = 1 − σ(log r)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DmLoss {
    /// `E[log(1 − D)]`
    A,
    /// `E[−log D]`
    B,
    /// `A + B`, which equals `E[log r]`.
    C,
}

fn dm_from_log_ratios(variant: DmLoss, s: Var<'_>) -> Result<Var<'_>> {
    let a = || log_one_minus_discriminator(s)?.mean();
    let b = || log_discriminator(s)?.mean()?.neg();
    match variant {
        DmLoss::A => a(),
        DmLoss::B => b(),
        DmLoss::C => a()?.add(b()?),
    }
}

pub fn dm_loss_latent<'g>(
    variant: DmLoss,
    alpha: &BoundRatio<'g>,
    phi: &BoundConditional<'g>,
    x: Var<'g>,
    eps: Option<Var<'g>>,
) -> Result<Var<'g>> {
    dm_from_log_ratios(variant, latent_log_ratios(alpha, phi, x, eps)?)
}

pub fn dm_loss_observed<'g>(
    variant: DmLoss,
    beta: &BoundRatio<'g>,
    theta: &BoundConditional<'g>,
    z: Var<'g>,
    xi: Option<Var<'g>>,
) -> Result<Var<'g>> {
    dm_from_log_ratios(variant, observed_log_ratios(beta, theta, z, xi)?)
}

pub fn dm_loss_a<'g>(alpha: &BoundRatio<'g>, phi: &BoundConditional<'g>, x: Var<'g>, eps: Option<Var<'g>>) -> Result<Var<'g>> {
    dm_loss_latent(DmLoss::A, alpha, phi, x, eps)
}

pub fn dm_loss_b<'g>(alpha: &BoundRatio<'g>, phi: &BoundConditional<'g>, x: Var<'g>, eps: Option<Var<'g>>) -> Result<Var<'g>> {
    dm_loss_latent(DmLoss::B, alpha, phi, x, eps)
}

pub fn dm_loss_c<'g>(alpha: &BoundRatio<'g>, phi: &BoundConditional<'g>, x: Var<'g>, eps: Option<Var<'g>>) -> Result<Var<'g>> {
    dm_loss_latent(DmLoss::C, alpha, phi, x, eps)
}

/// Which joint a loss compares or reconstructs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Data side: `x → z → x`, discriminating latent codes.
    Reverse,
    /// Prior side: `z → x → z`, discriminating observations.
    Forward,
}

/// Stochastic objectives carry noise and conditioning; deterministic ones
/// use mean mappings and an unconditioned discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanMode {
    Stochastic,
    Deterministic,
}

/// Inputs to [`gan_objective`].
#[derive(Clone, Copy, Debug)]
pub struct GanBatch<'g> {
    pub x: Var<'g>,
    pub z: Var<'g>,
    pub eps: Option<Var<'g>>,
    pub xi: Option<Var<'g>>,
}

/// `E[log D]` on the real side plus `E[log(1 − D)]` on the model side.
///
/// Reverse: real pairs `(x, z*)`, model pairs `(x, G_φ(ε; x))`, scored by
/// `ratio = r_α`. Forward: real pairs `(x, z*)` scored as `(x; z*)`, model
/// pairs `(F_θ(ξ; z*), z*)`, with `ratio = r_β`.
pub fn gan_objective<'g>(
    direction: Direction,
    mode: GanMode,
    ratio: &BoundRatio<'g>,
    theta: &BoundConditional<'g>,
    phi: &BoundConditional<'g>,
    batch: GanBatch<'g>,
) -> Result<Var<'g>> {
    let GanBatch { x, z, eps, xi } = batch;
    let (real, fake) = match (direction, mode) {
        (Direction::Reverse, GanMode::Stochastic) => {
            let z_post = posterior_sample(phi, x, eps)?;
            (ratio.log_ratio(z, x)?, ratio.log_ratio(z_post, x)?)
        }
        (Direction::Forward, GanMode::Stochastic) => {
            let x_model = likelihood_sample(theta, z, xi)?;
            (ratio.log_ratio(x, z)?, ratio.log_ratio(x_model, z)?)
        }
        (Direction::Reverse, GanMode::Deterministic) => (
            ratio.log_ratio_unconditioned(z)?,
            ratio.log_ratio_unconditioned(phi.mean(x)?)?,
        ),
        (Direction::Forward, GanMode::Deterministic) => (
            ratio.log_ratio_unconditioned(x)?,
            ratio.log_ratio_unconditioned(theta.mean(z)?)?,
        ),
    };
    let real = log_discriminator(clamp(real)?)?.mean()?;
    let fake = log_one_minus_discriminator(clamp(fake)?)?.mean()?;
    real.add(fake)
}

/// Mean `‖v − roundtrip(v)‖_ρ^ρ` through the mean mappings. Reverse
/// reconstructs `x` through `μ_θ(m_φ(x))`; forward reconstructs `z` through
/// `m_φ(μ_θ(z))`.
pub fn cycle_loss<'g>(
    direction: Direction,
    theta: &BoundConditional<'g>,
    phi: &BoundConditional<'g>,
    v: Var<'g>,
    norm_order: u32,
) -> Result<Var<'g>> {
    let round = match direction {
        Direction::Reverse => theta.mean(phi.mean(v)?)?,
        Direction::Forward => phi.mean(theta.mean(v)?)?,
    };
    reconstruction_loss(v, round, norm_order)
}

/// Mean `‖v − v̂‖_ρ^ρ` over rows.
pub fn reconstruction_loss<'g>(v: Var<'g>, v_hat: Var<'g>, norm_order: u32) -> Result<Var<'g>> {
    let r = v.sub(v_hat)?;
    let per_row = match norm_order {
        1 => r.abs()?,
        2 => r.square()?,
        p => {
            return Err(TensorError::Domain {
                op: "cycle_loss",
                detail: format!("norm order {p} is not 1 or 2"),
            })
        }
    };
    per_row.sum_rows()?.mean()
}

/// `E_{q* q_φ}[log r_α] − λ · E_{q* p*}[r_α − 1]`, the Lagrangian ratio
/// fitting objective. Posterior draws are detached.
pub fn kliep_objective<'g>(
    alpha: &BoundRatio<'g>,
    phi: &BoundConditional<'g>,
    x: Var<'g>,
    eps: Option<Var<'g>>,
    z_prior: Var<'g>,
    lambda: f64,
) -> Result<Var<'g>> {
    if !(lambda >= 0.0) {
        return Err(TensorError::Domain {
            op: "kliep_objective",
            detail: format!("multiplier must be nonnegative, got {lambda}"),
        });
    }
    let z_post = posterior_sample(phi, x, eps)?.detach();
    let s_q = clamp(alpha.log_ratio(z_post, x)?)?;
    let s_p = clamp(alpha.log_ratio(z_prior, x)?)?;
    let penalty = s_p.exp()?.add_scalar(-1.0)?.mean()?.scale(lambda)?;
    s_q.mean()?.sub(penalty)
}

/// Negative ELBO with an analytic prior density: NELL plus
/// `E_{q_φ}[log q_φ(z|x) − log p(z)]` on the same posterior draws.
pub fn negative_elbo<'g, P>(
    theta: &BoundConditional<'g>,
    phi: &BoundConditional<'g>,
    x: Var<'g>,
    eps: Var<'g>,
    log_prior: P,
) -> Result<(Var<'g>, Var<'g>)>
where
    P: Fn(Var<'g>) -> Result<Var<'g>>,
{
    let z = phi.sample(x, eps)?;
    let nell = theta.log_prob(z, x)?.mean()?.neg()?;
    let kl = phi.log_prob(x, z)?.sub(log_prior(z)?)?.mean()?;
    Ok((nell, kl))
}

/// The four terms of the symmetric joint-matching target, as graph values.
#[derive(Clone, Copy, Debug)]
pub struct SymmetricJoint<'g> {
    pub nell: Var<'g>,
    pub kl_dm_latent: Var<'g>,
    pub nelp: Var<'g>,
    pub kl_dm_observed: Var<'g>,
}

impl<'g> SymmetricJoint<'g> {
    /// `w_elbo · (nell + kl_latent) + w_aplbo · (nelp + kl_observed)`
    pub fn total(&self, weights: (f64, f64)) -> Result<Var<'g>> {
        let elbo = self.nell.add(self.kl_dm_latent)?.scale(weights.0)?;
        let aplbo = self.nelp.add(self.kl_dm_observed)?.scale(weights.1)?;
        elbo.add(aplbo)
    }
}

/// Constants of the degenerate limit: `−log p(v | m) = γ‖v − m‖ρ^ρ + δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LimitConstants {
    /// Likelihood side, from τ and D.
    pub gamma1: f64,
    pub delta1: f64,
    /// Posterior side, from t and K.
    pub gamma2: f64,
    pub delta2: f64,
}

impl LimitConstants {
    pub fn new(theta: &BoundConditional<'_>, phi: &BoundConditional<'_>, d: usize, k: usize) -> Self {
        let (gamma1, delta1) = theta.family().degenerate_constants(d, theta.scale_value());
        let (gamma2, delta2) = phi.family().degenerate_constants(k, phi.scale_value());
        Self {
            gamma1,
            delta1,
            gamma2,
            delta2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BatchSizes {
    pub data: usize,
    pub prior: usize,
}

/// Scalar summary of an objective with its named sub-terms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObjectiveReport {
    pub value: f64,
    pub terms: Vec<(String, f64)>,
    pub batch: BatchSizes,
    pub constants: LimitConstants,
}

impl ObjectiveReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Minibatches for the symmetric joint objective.
#[derive(Clone, Copy, Debug)]
pub struct JointBatch<'g> {
    /// Draws from `q*(x)`, `[n, D]`.
    pub x: Var<'g>,
    /// Draws from `p*(z)`, `[m, K]`.
    pub z: Var<'g>,
    /// Posterior noise, `[n, K]`.
    pub eps: Option<Var<'g>>,
    /// Likelihood noise, `[m, D]`.
    pub xi: Option<Var<'g>>,
}

pub fn symmetric_joint<'g>(
    theta: &BoundConditional<'g>,
    phi: &BoundConditional<'g>,
    alpha: &BoundRatio<'g>,
    beta: &BoundRatio<'g>,
    batch: JointBatch<'g>,
) -> Result<SymmetricJoint<'g>> {
    Ok(SymmetricJoint {
        nell: nell(theta, phi, batch.x, batch.eps)?,
        kl_dm_latent: kl_dm_latent(alpha, phi, batch.x, batch.eps)?,
        nelp: nelp(theta, phi, batch.z, batch.xi)?,
        kl_dm_observed: kl_dm_observed(beta, theta, batch.z, batch.xi)?,
    })
}

/// Evaluates the symmetric joint target. The entropies of `q*(x)` and
/// `p*(z)` are omitted: they do not depend on any trained parameter.
pub fn symmetric_joint_report<'g>(
    theta: &BoundConditional<'g>,
    phi: &BoundConditional<'g>,
    alpha: &BoundRatio<'g>,
    beta: &BoundRatio<'g>,
    batch: JointBatch<'g>,
) -> Result<ObjectiveReport> {
    let j = symmetric_joint(theta, phi, alpha, beta, batch)?;
    let terms: Vec<(String, f64)> = [
        ("nell", j.nell),
        ("kl_dm_latent", j.kl_dm_latent),
        ("nelp", j.nelp),
        ("kl_dm_observed", j.kl_dm_observed),
    ]
    .into_iter()
    .map(|(n, v)| (n.to_string(), v.item()))
    .collect();
    let (x, z) = (batch.x.shape(), batch.z.shape());
    Ok(ObjectiveReport {
        value: j.total((1.0, 1.0))?.item(),
        terms,
        batch: BatchSizes {
            data: x[0],
            prior: z[0],
        },
        constants: LimitConstants::new(theta, phi, x[1], z[1]),
    })
}

#[cfg(test)]
mod tests;
