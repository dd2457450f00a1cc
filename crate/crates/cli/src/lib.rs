//! Dataset ingestion, experiment runs and evaluation for implicit latent
//! variable models. The `ilvm` binary is a thin shell over this crate.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiment;
pub mod idx;
pub mod pca;
pub mod selftest;
pub mod spec;

pub use experiment::{evaluate_checkpoint, run_experiment, Evaluation, ExperimentError, RunSummary};
pub use spec::{ExperimentKind, ExperimentSpec, SpecError};
