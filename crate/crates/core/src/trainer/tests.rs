use super::*;
use crate::distributions::{banana_sample, standard_normal_bank};

fn small_config(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        steps: 30,
        batch: 16,
        log_interval: 5,
        seed: 3,
        architecture: Architecture {
            mapping_hidden: vec![8],
            ratio_hidden: vec![8],
            ..Architecture::default()
        },
        ..TrainConfig::default()
    }
}

fn banks() -> (SampleBank, SampleBank) {
    let data = standard_normal_bank(200, 4, 1).unwrap();
    let prior = banana_sample(200, 0.95, 2).unwrap();
    (data, prior)
}

#[test]
fn zero_steps_leave_the_state_untouched() {
    let (data, prior) = banks();
    let mut cfg = small_config(Mode::Sjmvi);
    cfg.steps = 0;
    let (state, rows) = train(cfg.clone(), data, Some(prior)).unwrap();
    assert!(rows.is_empty());
    assert_eq!(state, TrainState::init(&cfg, 4).unwrap());
}

#[test]
fn vae_baseline_has_no_ratio_networks() {
    let (data, _) = banks();
    let cfg = small_config(Mode::VaeBaseline);
    let (state, rows) = train(cfg, data, None).unwrap();
    assert!(state.model.latent_ratio.is_none() && state.model.observed_ratio.is_none());
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.dre_latent.is_none() && r.nell.is_some()));
}

#[test]
fn adversarial_modes_need_a_prior() {
    let (data, _) = banks();
    assert!(matches!(
        Trainer::new(small_config(Mode::Sjmvi), data, None),
        Err(TrainError::MissingPrior(Mode::Sjmvi))
    ));
}

#[test]
fn every_mode_logs_finite_rows() {
    for mode in [Mode::Sjmvi, Mode::Cyclegan, Mode::VaeBaseline] {
        let (data, prior) = banks();
        let (_, rows) = train(small_config(mode), data, Some(prior)).unwrap();
        assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![5, 10, 15, 20, 25, 30]);
        for r in &rows {
            assert!(r.total.unwrap().is_finite());
        }
    }
}

#[test]
fn role_separation() {
    let (data, prior) = banks();
    let mut t = Trainer::new(small_config(Mode::Sjmvi), data, Some(prior)).unwrap();
    t.run(3).unwrap();
    let before = t.state();
    let d = t.draw(true);
    let z = d.z.clone().unwrap();
    let (zp, xm) = t.sample_values(&d).unwrap();
    t.ratio_update(4, &d.x, &z, &zp, &xm).unwrap();
    let after = t.state();
    assert_eq!(before.model.generative, after.model.generative);
    assert_eq!(before.model.recognition, after.model.recognition);
    assert_ne!(before.model.latent_ratio, after.model.latent_ratio);
    assert_ne!(before.model.observed_ratio, after.model.observed_ratio);
}

#[test]
fn model_update_leaves_ratios_alone() {
    let (data, prior) = banks();
    let mut t = Trainer::new(small_config(Mode::Sjmvi), data, Some(prior)).unwrap();
    t.run(2).unwrap();
    let g = Graph::new();
    let theta = t.state.model.generative.bind(&g, true);
    let phi = t.state.model.recognition.bind(&g, true);
    let alpha = t.state.model.latent_ratio.clone().unwrap();
    let x = g.constant(t.data.samples().gather_rows(&[0, 1, 2]));
    let zp = phi.mean(x).unwrap();
    let loss = dm_latent_at(crate::objectives::DmLoss::C, &alpha.bind(&g, true), x, zp)
        .unwrap()
        .add(nell_at(&theta, x, zp).unwrap())
        .unwrap();
    let grads = g.backward(loss).unwrap();
    t.apply_model_update(3, &theta, &phi, &grads).unwrap();
    assert_eq!(t.state.model.latent_ratio.as_ref(), Some(&alpha));
}

#[test]
fn identical_seeds_give_identical_logs() {
    let run = || {
        let (data, prior) = banks();
        let (_, rows) = train(small_config(Mode::Sjmvi), data, Some(prior)).unwrap();
        let mut buf = Vec::new();
        write_metrics(&rows, &mut buf).unwrap();
        buf
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (data, prior) = banks();
    let cfg = small_config(Mode::Sjmvi);
    let mut t = Trainer::new(cfg.clone(), data, Some(prior)).unwrap();
    t.run(7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.json");
    let p2 = dir.path().join("b.json");
    save_checkpoint(&p1, &cfg, &t.state()).unwrap();
    let (cfg2, state2) = load_checkpoint(&p1).unwrap();
    assert_eq!(state2, t.state());
    save_checkpoint(&p2, &cfg2, &state2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn corrupt_and_foreign_checkpoints_are_rejected() {
    let (data, _) = banks();
    let cfg = small_config(Mode::VaeBaseline);
    let state = TrainState::init(&cfg, data.dim()).unwrap();
    let bytes = Checkpoint::new(cfg.clone(), state).to_bytes();
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() / 2]),
        Err(TrainError::Corrupt(_))
    ));
    let text = String::from_utf8(bytes).unwrap();
    let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
    assert!(matches!(
        Checkpoint::from_bytes(bumped.as_bytes()),
        Err(TrainError::VersionMismatch { found: 2, expected: 1 })
    ));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let cfg = small_config(Mode::Sjmvi);
    let (data, prior) = banks();
    let (_, full) = train(cfg.clone(), data.clone(), Some(prior.clone())).unwrap();

    let mut first = Trainer::new(cfg.clone(), data.clone(), Some(prior.clone())).unwrap();
    let mut rows = first.run(12).unwrap();
    let bytes = Checkpoint::new(cfg.clone(), first.state()).to_bytes();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    let mut second = Trainer::resume(ck.config, data, Some(prior), ck.state).unwrap();
    rows.extend(second.run(cfg.steps - 12).unwrap());
    assert_eq!(rows, full);
}

#[test]
fn invalid_configs_are_rejected() {
    let (data, prior) = banks();
    for edit in [
        |c: &mut TrainConfig| c.batch = 0,
        |c: &mut TrainConfig| c.ratio_steps = 0,
        |c: &mut TrainConfig| c.lr_model = 0.0,
        |c: &mut TrainConfig| c.norm_order = 3,
        |c: &mut TrainConfig| c.tau = -1.0,
    ] {
        let mut cfg = small_config(Mode::Sjmvi);
        edit(&mut cfg);
        assert!(matches!(
            Trainer::new(cfg, data.clone(), Some(prior.clone())),
            Err(TrainError::Config(_))
        ));
    }
}

#[test]
fn reconstruction_mse_of_identity_maps_is_zero() {
    let cfg = TrainConfig {
        architecture: Architecture {
            linear: true,
            ..Architecture::default()
        },
        latent_dim: 3,
        ..small_config(Mode::VaeBaseline)
    };
    let mut state = TrainState::init(&TrainConfig { prior_density: PriorDensity::StandardNormal, ..cfg }, 3).unwrap();
    state.model.generative.params.set("w0", Tensor::eye(3)).unwrap();
    state.model.recognition.params.set("w0", Tensor::eye(3)).unwrap();
    let x = Stream::new(1, 1).normal_tensor(10, 3);
    assert_eq!(reconstruction_mse(&state.model, &x, &x).unwrap(), (0.0, 0.0));
}
