use serde::{Deserialize, Serialize};

use crate::rng::{ids, Stream};
use crate::tensor::{Tensor, TensorError, Var};

use super::{Bound, ModelError, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply<'g>(self, v: Var<'g>) -> Result<Var<'g>, TensorError> {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.relu(),
        }
    }
}

/// Fully connected network. `widths` lists the input width, every hidden
/// width, then the output width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    /// Drop every nonlinearity, making the network affine.
    #[serde(default)]
    pub linear_only: bool,
    /// Apply the activation after the last layer too.
    #[serde(default)]
    pub activate_output: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, seed: u64) -> Self {
        Self {
            widths,
            activation,
            seed,
            linear_only: false,
            activate_output: false,
        }
    }

    pub fn linear(input: usize, output: usize, seed: u64) -> Self {
        Self {
            linear_only: true,
            ..Self::new(vec![input, output], Activation::Tanh, seed)
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(ModelError::BadSpec(format!("widths {:?}", self.widths)));
        }
        Ok(())
    }

    /// Glorot-uniform weights and zero biases, as `w0, b0, w1, b1, …`.
    pub fn init(&self) -> Result<ParamSet, ModelError> {
        self.validate()?;
        let mut stream = Stream::new(self.seed, ids::INIT);
        let mut params = ParamSet::new();
        for (l, pair) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| limit * (2.0 * stream.uniform_open() - 1.0))
                .collect();
            params.insert(format!("w{l}"), Tensor::matrix(fan_in, fan_out, w)?)?;
            params.insert(format!("b{l}"), Tensor::zeros([fan_out]))?;
        }
        Ok(params)
    }

    /// Forward pass using the first `2 · layers` entries of `params`.
    pub fn forward<'g>(&self, params: &Bound<'g>, input: Var<'g>) -> Result<Var<'g>, TensorError> {
        let mut h = input;
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            h = h.matmul(params.var(2 * l))?.add(params.var(2 * l + 1))?;
            if !self.linear_only && (l < last || self.activate_output) {
                h = self.activation.apply(h)?;
            }
        }
        Ok(h)
    }
}
