use serde::{Deserialize, Serialize};

use crate::models::ParamSet;
use crate::tensor::Tensor;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment buffers of one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl Moments {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One descent step `p ← p − lr · update(g)` on every entry of `params`.
pub fn optimizer_step(
    kind: Optimizer,
    params: &mut ParamSet,
    grads: &[Tensor],
    moments: &mut Moments,
    lr: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || moments.m.len() != params.len() {
        return Err(TrainError::GradientCount {
            params: params.len(),
            grads: grads.len(),
        });
    }
    for (p, g) in params.values().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TrainError::GradientShape {
                param: p.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
    }
    moments.t += 1;
    let t = moments.t as i32;
    for (i, p) in params.values_mut().enumerate() {
        let g = grads[i].data();
        match kind {
            Optimizer::Sgd => {
                for (w, gi) in p.data_mut().iter_mut().zip(g) {
                    *w -= lr * gi;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let m = moments.m[i].data_mut();
                let v = moments.v[i].data_mut();
                for (j, w) in p.data_mut().iter_mut().enumerate() {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                    v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                    *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
