//! One-dimensional linear-Gaussian case: data and prior are both N(0, 1),
//! so identity-like linear maps are optimal and both round trips should be
//! nearly lossless after a short run.

use ilvm_core::distributions::standard_normal_bank;
use ilvm_core::rng::Stream;
use ilvm_core::trainer::{reconstruction_mse, train, Architecture, Mode, PriorDensity};
use ilvm_core::TrainConfig;

#[test]
fn sjmvi_linear_maps_roundtrip() {
    let cfg = TrainConfig {
        mode: Mode::Sjmvi,
        steps: 2000,
        latent_dim: 1,
        prior_density: PriorDensity::StandardNormal,
        architecture: Architecture {
            linear: true,
            ratio_hidden: vec![32, 32],
            ..Default::default()
        },
        seed: 7,
        ..Default::default()
    };
    let data = standard_normal_bank(5000, 1, 1).unwrap();
    let prior = standard_normal_bank(5000, 1, 2).unwrap();
    let (state, rows) = train(cfg, data, Some(prior)).unwrap();
    assert_eq!(rows.len(), 20);
    let mut s = Stream::new(3, 0);
    let (x, z) = (s.normal_tensor(4000, 1), s.normal_tensor(4000, 1));
    let (mse_x, mse_z) = reconstruction_mse(&state.model, &x, &z).unwrap();
    assert!(mse_x < 0.05 && mse_z < 0.05, "mse_x {mse_x}, mse_z {mse_z}");
}
