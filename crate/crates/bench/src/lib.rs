//! Shared fixtures for the benchmarks.

use ilvm_core::distributions::banana_sample;
use ilvm_core::rng::Stream;
use ilvm_core::trainer::Mode;
use ilvm_core::{SampleBank, Tensor, TrainConfig, Trainer};

/// Standard normal matrix from a fixed stream.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    Stream::new(seed, 0).normal_tensor(rows, cols)
}

/// 64-dimensional data in (0, 1), shaped like the 8×8 digits.
pub fn pixel_bank(n: usize, seed: u64) -> SampleBank {
    let x = random_matrix(n, 64, seed).map(|v| 1.0 / (1.0 + (-v).exp()));
    SampleBank::new(x, seed).expect("non-empty bank")
}

/// A trainer with the default banana configuration for `mode`.
pub fn banana_trainer(mode: Mode) -> Trainer {
    let config = TrainConfig {
        mode,
        ..Default::default()
    };
    let prior = banana_sample(10_000, 0.95, 0).expect("prior bank");
    Trainer::new(config, pixel_bank(1500, 1), Some(prior)).expect("valid trainer")
}
