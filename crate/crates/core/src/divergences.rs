//! f-divergence calculus and the variational lower bounds built from it.
//!
//! For a convex `f` with `f(1) = 0`, `D_f(p‖q) = E_p[f(q/p)]` is bounded below
//! by `E_q[f′(r)] − E_p[f★(f′(r))]` for any positive `r`, with equality at
//! `r = q/p`. Ratio estimators emit `s = log r`, so the tensor forms here all
//! take log-ratios.

use serde::{Deserialize, Serialize};

use crate::tensor::{TensorError, Var};

/// Log-ratios are clamped to this range wherever an objective consumes them.
pub const LOG_RATIO_CLAMP: f64 = 30.0;

/// The two provided settings of `f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FDivergence {
    /// `f(u) = u log u`
    Kl,
    /// `f(u) = u log u − (u + 1) log(u + 1)`
    Gan,
}

pub fn kl_f() -> FDivergence {
    FDivergence::Kl
}

pub fn gan_f() -> FDivergence {
    FDivergence::Gan
}

type Result<T> = std::result::Result<T, TensorError>;

impl FDivergence {
    pub fn name(self) -> &'static str {
        match self {
            FDivergence::Kl => "kl",
            FDivergence::Gan => "gan",
        }
    }

    pub fn f(self, u: f64) -> f64 {
        match self {
            FDivergence::Kl => xlogx(u),
            FDivergence::Gan => xlogx(u) - xlogx(u + 1.0),
        }
    }

    pub fn fprime(self, u: f64) -> f64 {
        match self {
            FDivergence::Kl => 1.0 + u.ln(),
            // log σ(log u) = −log(1 + 1/u)
            FDivergence::Gan => -(1.0 / u).ln_1p(),
        }
    }

    /// Convex conjugate. The GAN conjugate is only finite for `t < 0`.
    pub fn fstar(self, t: f64) -> Result<f64> {
        match self {
            FDivergence::Kl => Ok((t - 1.0).exp()),
            FDivergence::Gan if t < 0.0 => Ok(-(-t.exp_m1()).ln()),
            FDivergence::Gan => Err(TensorError::Domain {
                op: "gan fstar",
                detail: format!("conjugate needs t < 0, got {t}"),
            }),
        }
    }

    /// `f★(f′(u))` in closed form.
    pub fn fstar_of_fprime(self, u: f64) -> f64 {
        match self {
            FDivergence::Kl => u,
            // −log(1 − σ(log u)) = log(1 + u)
            FDivergence::Gan => u.ln_1p(),
        }
    }

    /// `f(e^s)` elementwise.
    pub fn f_log<'g>(self, s: Var<'g>) -> Result<Var<'g>> {
        let u = s.exp()?;
        let ulogu = u.mul(s)?;
        match self {
            FDivergence::Kl => Ok(ulogu),
            FDivergence::Gan => ulogu.sub(u.add_scalar(1.0)?.mul(s.softplus()?)?),
        }
    }

    /// `f′(e^s)` elementwise.
    pub fn fprime_log<'g>(self, s: Var<'g>) -> Result<Var<'g>> {
        match self {
            FDivergence::Kl => s.add_scalar(1.0),
            FDivergence::Gan => s.log_sigmoid(),
        }
    }

    /// `f★(f′(e^s))` elementwise.
    pub fn fstar_fprime_log<'g>(self, s: Var<'g>) -> Result<Var<'g>> {
        match self {
            FDivergence::Kl => s.exp(),
            FDivergence::Gan => s.softplus(),
        }
    }

    /// `f★(t)` elementwise, with the domain of the GAN conjugate enforced.
    pub fn fstar_tensor<'g>(self, t: Var<'g>) -> Result<Var<'g>> {
        match self {
            FDivergence::Kl => t.add_scalar(-1.0)?.exp(),
            FDivergence::Gan => {
                if let Some(bad) = t.value().data().iter().find(|v| !(**v < 0.0)) {
                    return Err(TensorError::Domain {
                        op: "gan fstar",
                        detail: format!("conjugate needs t < 0, got {bad}"),
                    });
                }
                t.exp()?.neg()?.add_scalar(1.0)?.log()?.neg()
            }
        }
    }
}

fn xlogx(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * u.ln()
    }
}

fn check_batches(op: &'static str, parts: &[Var<'_>]) -> Result<()> {
    let n = parts[0].shape()[0];
    for p in &parts[1..] {
        if p.shape().first() != Some(&n) {
            return Err(TensorError::Shape {
                op,
                lhs: parts[0].shape(),
                rhs: p.shape(),
            });
        }
    }
    Ok(())
}

/// `E_q[f′(r)] − E_p[f★(f′(r))]` from log-ratios evaluated on the
/// numerator side `s_q` and the denominator side `s_p`.
pub fn bound_from_log_ratios<'g>(fdiv: FDivergence, s_q: Var<'g>, s_p: Var<'g>) -> Result<Var<'g>> {
    let (lo, hi) = (-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
    let a = fdiv.fprime_log(s_q.clamp(lo, hi)?)?.mean()?;
    let b = fdiv.fstar_fprime_log(s_p.clamp(lo, hi)?)?.mean()?;
    a.sub(b)
}

/// Lower bound on `D_f` between the model joint `q*(x) q_φ(z|x)` (numerator)
/// and `q*(x) p*(z)`. `log_ratio(z, x)` returns one log-ratio per row.
///
/// Row `i` of `z_post` is a posterior draw for row `i` of `x`; `z_prior` rows
/// are independent prior draws paired with the same `x` rows.
pub fn dre_bound_latent<'g, F>(fdiv: FDivergence, log_ratio: F, x: Var<'g>, z_post: Var<'g>, z_prior: Var<'g>) -> Result<Var<'g>>
where
    F: Fn(Var<'g>, Var<'g>) -> Result<Var<'g>>,
{
    check_batches("dre_bound_latent", &[x, z_post, z_prior])?;
    bound_from_log_ratios(fdiv, log_ratio(z_post, x)?, log_ratio(z_prior, x)?)
}

/// Mirror of [`dre_bound_latent`]: numerator `p*(z) p_θ(x|z)`, denominator
/// `p*(z) q*(x)`, with `log_ratio(x, z)`.
pub fn dre_bound_observed<'g, F>(fdiv: FDivergence, log_ratio: F, z: Var<'g>, x_model: Var<'g>, x_data: Var<'g>) -> Result<Var<'g>>
where
    F: Fn(Var<'g>, Var<'g>) -> Result<Var<'g>>,
{
    check_batches("dre_bound_observed", &[z, x_model, x_data])?;
    bound_from_log_ratios(fdiv, log_ratio(x_model, z)?, log_ratio(x_data, z)?)
}
