//! Implicit latent variable models trained by symmetric joint-matching
//! variational inference, with CycleGAN recovered as a configuration.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: reverse-mode autodiff over dense fp64 tensors.
//! * [`distributions`]: prescribed conditionals, sample banks, the banana prior.
//! * [`divergences`]: f-divergence calculus and variational lower bounds.
//! * [`models`]: MLP mappings and amortized log-ratio estimators.
//! * [`objectives`]: every loss as a pure function of bound parameters.
//! * [`trainer`]: alternating ratio/model optimization, checkpoints, metrics.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `Var` arithmetic is fallible, so it cannot implement the std operator traits.
#![allow(clippy::should_implement_trait)]

pub mod distributions;
pub mod divergences;
pub mod models;
pub mod objectives;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use distributions::{Family, SampleBank};
pub use divergences::FDivergence;
pub use models::{Activation, Ilvm, MlpSpec, ParamSet};
pub use objectives::ObjectiveReport;
pub use tensor::{Graph, Tensor, TensorError, Var};
pub use trainer::{TrainConfig, TrainState, Trainer};

