//! Parameterized mappings: the generative mean network, the recognition mean
//! network, and the two amortized log-ratio estimators.

mod mlp;
mod params;

pub use mlp::{Activation, MlpSpec};
pub use params::{Bound, ParamSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{Family, LocationScale, ScaleVar};
use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid network: {0}")]
    BadSpec(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("parameter {name:?} has shape {expected:?}, got {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

const LOG_SCALE: &str = "log_scale";

/// How the scale of a conditional is held.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum ScaleMode {
    Fixed(f64),
    /// Trainable, stored as a `log_scale` entry initialized at this value.
    Learned(f64),
}

impl ScaleMode {
    pub fn initial(self) -> f64 {
        match self {
            ScaleMode::Fixed(s) | ScaleMode::Learned(s) => s,
        }
    }
}

/// A prescribed conditional: mean network plus scalar scale. Used for both
/// the likelihood `p_θ(x|z)` and the recognition model `q_φ(z|x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditional {
    pub net: MlpSpec,
    pub family: Family,
    pub scale: ScaleMode,
    pub params: ParamSet,
}

impl Conditional {
    pub fn new(net: MlpSpec, family: Family, scale: ScaleMode) -> Result<Self, ModelError> {
        let mut params = net.init()?;
        match scale {
            ScaleMode::Fixed(s) if s < 0.0 || !s.is_finite() => return Err(ModelError::BadScale(s)),
            ScaleMode::Learned(s) if !(s > 0.0) || !s.is_finite() => return Err(ModelError::BadScale(s)),
            ScaleMode::Learned(s) => {
                params.insert(LOG_SCALE, Tensor::scalar(s.ln()))?;
            }
            ScaleMode::Fixed(_) => {}
        }
        Ok(Self {
            net,
            family,
            scale,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Current scale value.
    pub fn scale_value(&self) -> f64 {
        match self.scale {
            ScaleMode::Fixed(s) => s,
            ScaleMode::Learned(_) => self.params.get(LOG_SCALE).expect("learned scale").item().exp(),
        }
    }

    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> BoundConditional<'g> {
        self.bound(self.params.bind(graph, trainable))
    }

    fn bound<'g>(&self, params: Bound<'g>) -> BoundConditional<'g> {
        BoundConditional {
            net: self.net.clone(),
            family: self.family,
            scale: self.scale,
            params,
        }
    }

    /// Binds to vars the caller already placed on a graph, in entry order.
    pub fn attach<'g>(&self, vars: Vec<Var<'g>>) -> Result<BoundConditional<'g>, ModelError> {
        check_attach(&self.params, &vars)?;
        Ok(self.bound(Bound::new(vars)))
    }

    /// Mean network applied to plain values, off any graph the caller keeps.
    pub fn mean_of(&self, input: &Tensor) -> Result<Tensor, TensorError> {
        let g = Graph::new();
        let b = self.bind(&g, false);
        Ok(b.mean(g.constant(input.clone()))?.value())
    }
}

#[derive(Clone, Debug)]
pub struct BoundConditional<'g> {
    net: MlpSpec,
    family: Family,
    scale: ScaleMode,
    pub params: Bound<'g>,
}

impl<'g> BoundConditional<'g> {
    pub fn scale_value(&self) -> f64 {
        match self.scale {
            ScaleMode::Fixed(s) => s,
            ScaleMode::Learned(_) => self.log_scale().expect("learned scale").item().exp(),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// The trainable log-scale leaf, when the scale is learned.
    pub fn log_scale(&self) -> Option<Var<'g>> {
        match self.scale {
            ScaleMode::Learned(_) => self.params.vars().last().copied(),
            ScaleMode::Fixed(_) => None,
        }
    }

    pub fn mean(&self, input: Var<'g>) -> Result<Var<'g>, TensorError> {
        self.net.forward(&self.params, input)
    }

    pub fn dist(&self) -> LocationScale<'g> {
        let scale = match self.log_scale() {
            Some(l) => ScaleVar::Log(l),
            None => ScaleVar::Fixed(self.scale.initial()),
        };
        LocationScale {
            family: self.family,
            scale,
        }
    }

    /// Reparameterized draw `mean(input) + scale · noise`.
    pub fn sample(&self, input: Var<'g>, noise: Var<'g>) -> Result<Var<'g>, TensorError> {
        self.dist().rsample(self.mean(input)?, noise)
    }

    /// Per-row `log p(value | input)`.
    pub fn log_prob(&self, input: Var<'g>, value: Var<'g>) -> Result<Var<'g>, TensorError> {
        self.dist().log_prob(self.mean(input)?, value)
    }
}

/// Amortized log-ratio estimator `log r(primary; conditioning)`.
///
/// The network reads `concat(primary, conditioning)`, or `primary` alone when
/// `ignore_conditioning` is set. The last layer starts at zero, so an
/// untrained estimator reports `r ≡ 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimator {
    pub net: MlpSpec,
    pub primary_dim: usize,
    pub cond_dim: usize,
    pub ignore_conditioning: bool,
    pub params: ParamSet,
}

impl RatioEstimator {
    /// `hidden` lists the hidden widths; input and output widths are implied.
    pub fn new(
        primary_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        activation: Activation,
        ignore_conditioning: bool,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let input = if ignore_conditioning { primary_dim } else { primary_dim + cond_dim };
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let net = MlpSpec::new(widths, activation, seed);
        let mut params = net.init()?;
        let last = net.layers() - 1;
        let w = params.get(&format!("w{last}")).expect("last layer").shape().to_vec();
        params.set(&format!("w{last}"), Tensor::zeros(w))?;
        Ok(Self {
            net,
            primary_dim,
            cond_dim,
            ignore_conditioning,
            params,
        })
    }

    pub fn attach<'g>(&self, vars: Vec<Var<'g>>) -> Result<BoundRatio<'g>, ModelError> {
        check_attach(&self.params, &vars)?;
        Ok(self.bound(Bound::new(vars)))
    }

    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> BoundRatio<'g> {
        self.bound(self.params.bind(graph, trainable))
    }

    fn bound<'g>(&self, params: Bound<'g>) -> BoundRatio<'g> {
        BoundRatio {
            net: self.net.clone(),
            ignore_conditioning: self.ignore_conditioning,
            params,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundRatio<'g> {
    net: MlpSpec,
    ignore_conditioning: bool,
    pub params: Bound<'g>,
}

impl<'g> BoundRatio<'g> {
    /// A view whose parameters receive no gradient.
    pub fn frozen(&self) -> Self {
        Self {
            net: self.net.clone(),
            ignore_conditioning: self.ignore_conditioning,
            params: self.params.detached(),
        }
    }

    pub fn ignores_conditioning(&self) -> bool {
        self.ignore_conditioning
    }

    /// Log-ratio of `primary` alone; only defined for estimators that ignore
    /// their conditioning input.
    pub fn log_ratio_unconditioned(&self, primary: Var<'g>) -> Result<Var<'g>, TensorError> {
        if !self.ignore_conditioning {
            return Err(TensorError::Domain {
                op: "log_ratio_unconditioned",
                detail: "estimator reads its conditioning input".into(),
            });
        }
        let n = primary.shape()[0];
        self.net.forward(&self.params, primary)?.reshape(&[n])
    }

    /// One log-ratio per row, shape `[n]`.
    pub fn log_ratio(&self, primary: Var<'g>, cond: Var<'g>) -> Result<Var<'g>, TensorError> {
        let (p, c) = (primary.shape(), cond.shape());
        if p.len() != 2 || c.len() != 2 || p[0] != c[0] {
            return Err(TensorError::Shape {
                op: "log_ratio",
                lhs: p,
                rhs: c,
            });
        }
        let input = if self.ignore_conditioning {
            primary
        } else {
            primary.graph().concat(&[primary, cond], 1)?
        };
        let out = self.net.forward(&self.params, input)?;
        out.reshape(&[p[0]])
    }
}

fn check_attach(params: &ParamSet, vars: &[Var<'_>]) -> Result<(), ModelError> {
    if params.len() != vars.len() {
        return Err(ModelError::BadSpec(format!(
            "expected {} parameter tensors, got {}",
            params.len(),
            vars.len()
        )));
    }
    for ((name, want), v) in params.names().zip(params.values()).zip(vars) {
        if want.shape() != v.shape().as_slice() {
            return Err(ModelError::ParamShape {
                name: name.to_string(),
                expected: want.shape().to_vec(),
                found: v.shape(),
            });
        }
    }
    Ok(())
}

/// The four parameter groups: θ (generative), φ (recognition), α (latent
/// ratio) and β (observed ratio).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ilvm {
    /// `p_θ(x|z)`, a map from latent width K to observed width D.
    pub generative: Conditional,
    /// `q_φ(z|x)`, a map from D to K.
    pub recognition: Conditional,
    /// `r_α(z; x)`
    pub latent_ratio: Option<RatioEstimator>,
    /// `r_β(x; z)`
    pub observed_ratio: Option<RatioEstimator>,
}

impl Ilvm {
    pub fn latent_dim(&self) -> usize {
        self.generative.input_dim()
    }

    pub fn observed_dim(&self) -> usize {
        self.generative.output_dim()
    }

    /// `μ_θ(m_φ(x))` on plain values.
    pub fn reconstruct_x(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        self.generative.mean_of(&self.recognition.mean_of(x)?)
    }

    /// `m_φ(μ_θ(z))` on plain values.
    pub fn reconstruct_z(&self, z: &Tensor) -> Result<Tensor, TensorError> {
        self.recognition.mean_of(&self.generative.mean_of(z)?)
    }
}

/// `D = 1 − σ(log r)`; values near 0 mark samples judged to come from the
/// numerator (model) side.
pub fn discriminator_from_ratio<'g>(log_r: Var<'g>) -> Result<Var<'g>, TensorError> {
    log_r.neg()?.sigmoid()
}

/// `log D = −softplus(log r)`
pub fn log_discriminator<'g>(log_r: Var<'g>) -> Result<Var<'g>, TensorError> {
    log_r.log1m_sigmoid()
}

/// `log(1 − D) = −softplus(−log r)`
pub fn log_one_minus_discriminator<'g>(log_r: Var<'g>) -> Result<Var<'g>, TensorError> {
    log_r.log_sigmoid()
}
