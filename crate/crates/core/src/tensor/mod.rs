//! Reverse-mode automatic differentiation over dense fp64 tensors.
//!
//! Values live in [`Tensor`]; a [`Graph`] records every primitive op applied
//! to its [`Var`] handles and [`Graph::backward`] sweeps the tape once in
//! reverse. Broadcasting is limited to a scalar or a single leading-batch row
//! on the right-hand operand.
//!
//! ```
//! use ilvm_core::tensor::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let w = g.param(Tensor::vector(vec![1.0, 2.0]));
//! let loss = w.square()?.sum()?;
//! let grads = g.backward(loss)?;
//! assert_eq!(grads.get(w).data(), &[2.0, 4.0]);
//! # Ok::<(), ilvm_core::tensor::TensorError>(())
//! ```

mod gradcheck;
mod graph;
mod value;

pub use gradcheck::{grad_check, GradCheckError, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId, Var};
pub use value::Tensor;

#[cfg(test)]
pub(crate) use graph::softplus;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: input outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: non-finite result at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("buffer of length {len} does not match shape {shape:?}")]
    BadBuffer { shape: Vec<usize>, len: usize },
}

#[cfg(test)]
mod tests;
