use std::f64::consts::PI;

use super::*;
use crate::distributions::Family;
use crate::divergences::{dre_bound_latent, gan_f, kl_f};
use crate::models::{Activation, Conditional, MlpSpec, RatioEstimator, ScaleMode};
use crate::rng::Stream;
use crate::tensor::{grad_check, Graph, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn linear(din: usize, dout: usize, family: Family, scale: f64, w: Tensor, b: Tensor) -> Conditional {
    let mut c = Conditional::new(MlpSpec::linear(din, dout, 0), family, ScaleMode::Fixed(scale)).unwrap();
    c.params.set("w0", w).unwrap();
    c.params.set("b0", b).unwrap();
    c
}

fn identity(dim: usize, family: Family, scale: f64) -> Conditional {
    linear(dim, dim, family, scale, Tensor::eye(dim), Tensor::zeros([dim]))
}

fn tanh_net(din: usize, dout: usize, family: Family, scale: f64, seed: u64) -> Conditional {
    let spec = MlpSpec::new(vec![din, 6, dout], Activation::Tanh, seed);
    let mut c = Conditional::new(spec, family, ScaleMode::Fixed(scale)).unwrap();
    let mut s = Stream::new(seed, 77);
    c.params.set("b0", Tensor::vector(s.normal_tensor(1, 6).into_data())).unwrap();
    c
}

/// A ratio net with a random (non-zero) head.
fn ratio(primary: usize, cond: usize, ignore: bool, seed: u64) -> RatioEstimator {
    let mut r = RatioEstimator::new(primary, cond, &[8], Activation::Tanh, ignore, seed).unwrap();
    let mut s = Stream::new(seed, 78);
    r.params.set("w1", s.normal_tensor(8, 1)).unwrap();
    r.params.set("b1", Tensor::vector(vec![s.standard_normal()])).unwrap();
    r
}

fn constant_ratio(primary: usize, cond: usize, c: f64) -> RatioEstimator {
    let mut r = RatioEstimator::new(primary, cond, &[4], Activation::Relu, false, 0).unwrap();
    r.params.set("b1", Tensor::vector(vec![c])).unwrap();
    r
}

struct Draws {
    x: Tensor,
    z: Tensor,
    eps: Tensor,
    xi: Tensor,
}

fn draws(n: usize, d: usize, k: usize, seed: u64) -> Draws {
    let mut s = Stream::new(seed, 5);
    Draws {
        x: s.normal_tensor(n, d),
        z: s.normal_tensor(n, k),
        eps: s.normal_tensor(n, k),
        xi: s.normal_tensor(n, d),
    }
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

#[test]
fn nell_residual_free() {
    let d = 3;
    let (theta, phi) = (identity(d, Family::Gaussian, 1.0), identity(d, Family::Gaussian, 0.0));
    let g = Graph::new();
    let dr = draws(7, d, d, 1);
    let v = nell(&theta.bind(&g, false), &phi.bind(&g, false), g.constant(dr.x), Some(g.constant(dr.eps)))
        .unwrap()
        .item();
    close(v, d as f64 / 2.0 * LN_2PI, 1e-12);
}

#[test]
fn nelp_residual_free() {
    let k = 2;
    let (theta, phi) = (identity(k, Family::Gaussian, 0.0), identity(k, Family::Gaussian, 1.0));
    let g = Graph::new();
    let dr = draws(7, k, k, 2);
    let v = nelp(&theta.bind(&g, false), &phi.bind(&g, false), g.constant(dr.z), Some(g.constant(dr.xi)))
        .unwrap()
        .item();
    close(v, k as f64 / 2.0 * LN_2PI, 1e-12);
}

#[test]
fn nell_scale_doubling_matches_closed_form() {
    let (d, k, tau) = (4, 2, 0.3);
    let phi = tanh_net(d, k, Family::Gaussian, 0.2, 3);
    let dr = draws(9, d, k, 3);
    let eval = |tau: f64| {
        let theta = tanh_net(k, d, Family::Gaussian, tau, 4);
        let g = Graph::new();
        nell(&theta.bind(&g, false), &phi.bind(&g, false), g.constant(dr.x.clone()), Some(g.constant(dr.eps.clone())))
            .unwrap()
            .item()
    };
    // Mean squared residual on the same draws, independent of τ.
    let theta = tanh_net(k, d, Family::Gaussian, tau, 4);
    let z = phi.mean_of(&dr.x).unwrap().data().iter().zip(dr.eps.data()).map(|(m, e)| m + 0.2 * e).collect();
    let mu = theta.mean_of(&Tensor::matrix(9, k, z).unwrap()).unwrap();
    let s = mu.data().iter().zip(dr.x.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 9.0;
    let want = 3.0 * s / (8.0 * tau * tau) - d as f64 * 2f64.ln();
    close(eval(tau) - eval(2.0 * tau), want, 1e-10);
}

#[test]
fn small_posterior_scale_approaches_cycle_loss() {
    let (d, k, t) = (3, 2, 1e-3);
    let theta = tanh_net(k, d, Family::Gaussian, 0.5, 5);
    let phi = tanh_net(d, k, Family::Gaussian, t, 6);
    let dr = draws(10, d, k, 6);
    let g = Graph::new();
    let (bt, bp) = (theta.bind(&g, false), phi.bind(&g, false));
    let x = g.constant(dr.x);
    let v = nell(&bt, &bp, x, Some(g.constant(dr.eps))).unwrap().item();
    let c = LimitConstants::new(&bt, &bp, d, k);
    let cyc = cycle_loss(Direction::Reverse, &bt, &bp, x, 2).unwrap().item();
    assert!((v - (c.gamma1 * cyc + c.delta1)).abs() < 1e-3 * c.gamma1);
}

#[test]
fn laplace_limit_uses_l1() {
    let (d, k) = (3, 2);
    let theta = tanh_net(k, d, Family::Laplace, 0.5, 7);
    let phi = tanh_net(d, k, Family::Laplace, 0.0, 8);
    let dr = draws(10, d, k, 8);
    let g = Graph::new();
    let (bt, bp) = (theta.bind(&g, false), phi.bind(&g, false));
    let x = g.constant(dr.x);
    let v = nell(&bt, &bp, x, None).unwrap().item();
    let c = LimitConstants::new(&bt, &bp, d, k);
    let cyc = cycle_loss(Direction::Reverse, &bt, &bp, x, 1).unwrap().item();
    close(v, c.gamma1 * cyc + c.delta1, 1e-12);
    close(c.gamma1, 2.0, 0.0);
    close(c.delta1, 3.0 * 1f64.ln(), 1e-15);
}

#[test]
fn kl_dre_at_unit_ratio_and_delegation() {
    let (d, k) = (3, 2);
    let phi = tanh_net(d, k, Family::Gaussian, 0.3, 1);
    let alpha0 = constant_ratio(k, d, 0.0);
    let alpha = ratio(k, d, false, 9);
    let dr = draws(12, d, k, 9);
    let g = Graph::new();
    let bp = phi.bind(&g, false);
    let (x, z, eps) = (g.constant(dr.x), g.constant(dr.z), g.constant(dr.eps));
    let zero = kl_dre_latent(&alpha0.bind(&g, false), &bp, x, Some(eps), z).unwrap().item();
    assert_eq!(zero, 0.0);
    let ba = alpha.bind(&g, false);
    let v = kl_dre_latent(&ba, &bp, x, Some(eps), z).unwrap().item();
    let z_post = bp.sample(x, eps).unwrap();
    let w = dre_bound_latent(kl_f(), |z, x| ba.log_ratio(z, x), x, z_post, z).unwrap().item();
    assert_eq!(v, w);
}

#[test]
fn kl_dm_constant_ratio() {
    let (d, k) = (3, 2);
    let phi = tanh_net(d, k, Family::Gaussian, 0.3, 1);
    let theta = tanh_net(k, d, Family::Gaussian, 0.3, 2);
    let dr = draws(12, d, k, 10);
    let g = Graph::new();
    let (x, z) = (g.constant(dr.x), g.constant(dr.z));
    for c in [0.0, -1.25, 3.5] {
        let a = constant_ratio(k, d, c);
        let b = constant_ratio(d, k, c);
        let lat = kl_dm_latent(&a.bind(&g, false), &phi.bind(&g, false), x, Some(g.constant(dr.eps.clone()))).unwrap();
        let obs = kl_dm_observed(&b.bind(&g, false), &theta.bind(&g, false), z, Some(g.constant(dr.xi.clone()))).unwrap();
        close(lat.item(), c, 1e-15);
        close(obs.item(), c, 1e-15);
    }
}

#[test]
fn kl_dm_with_analytic_ratio() {
    // q_φ(z|x) = N(m, 1) regardless of x, p*(z) = N(0, 1): log r = m z − m²/2.
    let m = 0.8;
    let n = 100_000;
    let phi = linear(1, 1, Family::Gaussian, 1.0, Tensor::zeros([1, 1]), Tensor::vector(vec![m]));
    let mut alpha = RatioEstimator::new(1, 1, &[], Activation::Tanh, true, 0).unwrap();
    alpha.params.set("w0", Tensor::full([1, 1], m)).unwrap();
    alpha.params.set("b0", Tensor::vector(vec![-m * m / 2.0])).unwrap();
    let mut s = Stream::new(12, 1);
    let g = Graph::new();
    let x = g.constant(s.normal_tensor(n, 1));
    let eps = g.constant(s.normal_tensor(n, 1));
    let v = kl_dm_latent(&alpha.bind(&g, false), &phi.bind(&g, false), x, Some(eps)).unwrap().item();
    close(v, m * m / 2.0, 0.02);
}

#[test]
fn gan_objective_at_unit_ratio() {
    let (d, k) = (3, 2);
    let (theta, phi) = (tanh_net(k, d, Family::Gaussian, 0.3, 1), tanh_net(d, k, Family::Gaussian, 0.3, 2));
    let dr = draws(6, d, k, 3);
    let g = Graph::new();
    let batch = GanBatch {
        x: g.constant(dr.x),
        z: g.constant(dr.z),
        eps: Some(g.constant(dr.eps)),
        xi: Some(g.constant(dr.xi)),
    };
    let (bt, bp) = (theta.bind(&g, false), phi.bind(&g, false));
    let a = constant_ratio(k, d, 0.0);
    let b = constant_ratio(d, k, 0.0);
    let rev = gan_objective(Direction::Reverse, GanMode::Stochastic, &a.bind(&g, false), &bt, &bp, batch).unwrap();
    let fwd = gan_objective(Direction::Forward, GanMode::Stochastic, &b.bind(&g, false), &bt, &bp, batch).unwrap();
    close(rev.item(), -4f64.ln(), 1e-15);
    close(fwd.item(), -4f64.ln(), 1e-15);
}

#[test]
fn gan_objective_is_the_gan_bound() {
    let (d, k) = (3, 2);
    for seed in 0..20 {
        let (theta, phi) = (tanh_net(k, d, Family::Gaussian, 0.3, seed), tanh_net(d, k, Family::Gaussian, 0.3, seed + 100));
        let alpha = ratio(k, d, false, seed);
        let dr = draws(6, d, k, seed);
        let g = Graph::new();
        let (x, z, eps) = (g.constant(dr.x), g.constant(dr.z), g.constant(dr.eps));
        let (bt, bp, ba) = (theta.bind(&g, false), phi.bind(&g, false), alpha.bind(&g, false));
        let batch = GanBatch { x, z, eps: Some(eps), xi: None };
        let v = gan_objective(Direction::Reverse, GanMode::Stochastic, &ba, &bt, &bp, batch).unwrap().item();
        let z_post = bp.sample(x, eps).unwrap();
        let w = dre_bound_latent(gan_f(), |z, x| ba.log_ratio(z, x), x, z_post, z).unwrap().item();
        close(v, w, 1e-12);
    }
}

#[test]
fn deterministic_reduction_is_exact() {
    let (d, k) = (3, 2);
    let theta = tanh_net(k, d, Family::Gaussian, 0.0, 1);
    let phi = tanh_net(d, k, Family::Gaussian, 0.0, 2);
    let (alpha, beta) = (ratio(k, d, true, 3), ratio(d, k, true, 4));
    let dr = draws(8, d, k, 5);
    let g = Graph::new();
    let batch = GanBatch {
        x: g.constant(dr.x),
        z: g.constant(dr.z),
        eps: Some(g.constant(dr.eps)),
        xi: Some(g.constant(dr.xi)),
    };
    let (bt, bp) = (theta.bind(&g, false), phi.bind(&g, false));
    for (dir, r) in [(Direction::Reverse, &alpha), (Direction::Forward, &beta)] {
        let br = r.bind(&g, false);
        let s = gan_objective(dir, GanMode::Stochastic, &br, &bt, &bp, batch).unwrap().item();
        let det = gan_objective(dir, GanMode::Deterministic, &br, &bt, &bp, batch).unwrap().item();
        assert_eq!(s.to_bits(), det.to_bits());
    }
    // Deterministic mode needs an unconditioned discriminator.
    let cond = ratio(k, d, false, 3);
    assert!(gan_objective(Direction::Reverse, GanMode::Deterministic, &cond.bind(&g, false), &bt, &bp, batch).is_err());
}

#[test]
fn dm_losses_at_unit_ratio_and_constant_ratio() {
    let (d, k) = (3, 2);
    let phi = tanh_net(d, k, Family::Gaussian, 0.3, 1);
    let dr = draws(6, d, k, 3);
    let g = Graph::new();
    let (x, eps) = (g.constant(dr.x), Some(g.constant(dr.eps)));
    let bp = phi.bind(&g, false);
    let a0 = constant_ratio(k, d, 0.0);
    let b0 = a0.bind(&g, false);
    close(dm_loss_a(&b0, &bp, x, eps).unwrap().item(), -2f64.ln(), 1e-15);
    close(dm_loss_b(&b0, &bp, x, eps).unwrap().item(), 2f64.ln(), 1e-15);
    assert_eq!(dm_loss_c(&b0, &bp, x, eps).unwrap().item(), 0.0);
    for c in [-3.0, 0.7, 12.0] {
        let a = constant_ratio(k, d, c);
        close(dm_loss_c(&a.bind(&g, false), &bp, x, eps).unwrap().item(), c, 1e-12);
    }
}

#[test]
fn combined_dm_loss_is_kl_dm() {
    let (d, k) = (3, 2);
    for seed in 0..20 {
        let phi = tanh_net(d, k, Family::Gaussian, 0.3, seed);
        let theta = tanh_net(k, d, Family::Gaussian, 0.3, seed + 1);
        let (alpha, beta) = (ratio(k, d, false, seed), ratio(d, k, false, seed + 7));
        let dr = draws(6, d, k, seed);
        let g = Graph::new();
        let (x, z) = (g.constant(dr.x), g.constant(dr.z));
        let (eps, xi) = (Some(g.constant(dr.eps)), Some(g.constant(dr.xi)));
        let (bp, bt) = (phi.bind(&g, false), theta.bind(&g, false));
        let (ba, bb) = (alpha.bind(&g, false), beta.bind(&g, false));
        close(dm_loss_c(&ba, &bp, x, eps).unwrap().item(), kl_dm_latent(&ba, &bp, x, eps).unwrap().item(), 1e-12);
        close(
            dm_loss_observed(DmLoss::C, &bb, &bt, z, xi).unwrap().item(),
            kl_dm_observed(&bb, &bt, z, xi).unwrap().item(),
            1e-12,
        );
    }
}

#[test]
fn cycle_losses() {
    let d = 3;
    let g = Graph::new();
    let dr = draws(5, d, d, 1);
    let x = g.constant(dr.x);
    let id = identity(d, Family::Gaussian, 0.0);
    let b = id.bind(&g, false);
    for dir in [Direction::Reverse, Direction::Forward] {
        assert_eq!(cycle_loss(dir, &b, &b, x, 2).unwrap().item(), 0.0);
        assert_eq!(cycle_loss(dir, &b, &b, x, 1).unwrap().item(), 0.0);
    }
    let c = [0.5, -1.0, 2.0];
    let shifted = linear(d, d, Family::Gaussian, 0.0, Tensor::eye(d), Tensor::vector(c.to_vec()));
    let v = cycle_loss(Direction::Reverse, &shifted.bind(&g, false), &b, x, 2).unwrap().item();
    close(v, c.iter().map(|v| v * v).sum(), 1e-12);
    assert!(cycle_loss(Direction::Reverse, &b, &b, x, 3).is_err());
}

#[test]
fn symmetric_report_at_identity() {
    let (d, k) = (3, 3);
    let (theta, phi) = (identity(k, Family::Gaussian, 1.0), identity(d, Family::Gaussian, 1.0));
    let (a, b) = (constant_ratio(k, d, 0.0), constant_ratio(d, k, 0.0));
    let dr = draws(6, d, k, 2);
    let g = Graph::new();
    let batch = JointBatch {
        x: g.constant(dr.x),
        z: g.constant(dr.z),
        eps: None,
        xi: None,
    };
    let r = symmetric_joint_report(&theta.bind(&g, false), &phi.bind(&g, false), &a.bind(&g, false), &b.bind(&g, false), batch)
        .unwrap();
    close(r.value, (d + k) as f64 / 2.0 * (2.0 * PI).ln(), 1e-12);
    assert_eq!(r.batch, BatchSizes { data: 6, prior: 6 });
    assert_eq!(r.term("kl_dm_latent"), Some(0.0));
}

#[test]
fn symmetric_report_bookkeeping_and_permutation() {
    let (d, k) = (4, 2);
    let theta = tanh_net(k, d, Family::Gaussian, 0.4, 1);
    let phi = tanh_net(d, k, Family::Gaussian, 0.2, 2);
    let (a, b) = (ratio(k, d, false, 3), ratio(d, k, false, 4));
    let dr = draws(10, d, k, 5);
    let report = |perm: &[usize]| {
        let g = Graph::new();
        let batch = JointBatch {
            x: g.constant(dr.x.gather_rows(perm)),
            z: g.constant(dr.z.gather_rows(perm)),
            eps: Some(g.constant(dr.eps.gather_rows(perm))),
            xi: Some(g.constant(dr.xi.gather_rows(perm))),
        };
        symmetric_joint_report(&theta.bind(&g, false), &phi.bind(&g, false), &a.bind(&g, false), &b.bind(&g, false), batch)
            .unwrap()
    };
    let ident: Vec<usize> = (0..10).collect();
    let r = report(&ident);
    let sum: f64 = r.terms.iter().map(|(_, v)| v).sum();
    close(r.value, sum, 1e-12);
    let shuffled = Stream::new(3, 3).permutation(10);
    close(report(&shuffled).value, r.value, 1e-12);
    close(r.constants.gamma1, 1.0 / (2.0 * 0.16), 1e-12);
    close(r.constants.delta2, 1.0 * (PI * 2.0 * 0.04).ln(), 1e-12);
}

#[test]
fn kliep_cases() {
    let (d, k) = (3, 2);
    let phi = tanh_net(d, k, Family::Gaussian, 0.3, 1);
    let dr = draws(8, d, k, 2);
    let g = Graph::new();
    let (x, z, eps) = (g.constant(dr.x), g.constant(dr.z), Some(g.constant(dr.eps)));
    let bp = phi.bind(&g, false);
    for seed in 0..10 {
        let a = ratio(k, d, false, seed);
        let ba = a.bind(&g, false);
        close(
            kliep_objective(&ba, &bp, x, eps, z, 1.0).unwrap().item(),
            kl_dre_latent(&ba, &bp, x, eps, z).unwrap().item(),
            1e-12,
        );
    }
    let c = constant_ratio(k, d, 1.7);
    close(kliep_objective(&c.bind(&g, false), &bp, x, eps, z, 0.0).unwrap().item(), 1.7, 1e-15);
    let zero = constant_ratio(k, d, 0.0);
    for lambda in [0.0, 0.5, 3.0] {
        assert_eq!(kliep_objective(&zero.bind(&g, false), &bp, x, eps, z, lambda).unwrap().item(), 0.0);
    }
    assert!(kliep_objective(&zero.bind(&g, false), &bp, x, eps, z, -1.0).is_err());
}

#[test]
fn frozen_parameter_contract() {
    let (d, k) = (3, 2);
    let phi = tanh_net(d, k, Family::Gaussian, 0.3, 1);
    let alpha = ratio(k, d, false, 2);
    let dr = draws(8, d, k, 3);
    let g = Graph::new();
    let (x, z, eps) = (g.constant(dr.x), g.constant(dr.z), Some(g.constant(dr.eps)));
    let (bp, ba) = (phi.bind(&g, true), alpha.bind(&g, true));
    for variant in [DmLoss::A, DmLoss::B, DmLoss::C] {
        let loss = dm_loss_latent(variant, &ba, &bp, x, eps).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(ba.params.grads(&grads).iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
        assert!(bp.params.grads(&grads).iter().any(|t| t.data().iter().any(|v| *v != 0.0)));
    }
    for fdiv in [kl_f(), gan_f()] {
        let obj = dre_latent(fdiv, &ba, &bp, x, eps, z).unwrap();
        let grads = g.backward(obj).unwrap();
        assert!(bp.params.grads(&grads).iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
        assert!(ba.params.grads(&grads).iter().any(|t| t.data().iter().any(|v| *v != 0.0)));
    }
}

#[test]
fn nell_gradients_match_finite_differences() {
    let (d, k) = (3, 2);
    let theta = tanh_net(k, d, Family::Gaussian, 0.5, 1);
    let phi = tanh_net(d, k, Family::Gaussian, 0.3, 2);
    let dr = draws(6, d, k, 3);
    let mut params: Vec<Tensor> = theta.params.values().cloned().collect();
    params.extend(phi.params.values().cloned());
    let nt = theta.params.len();
    let report = grad_check(
        |g, p| {
            let bt = theta.attach(p[..nt].to_vec()).unwrap();
            let bp = phi.attach(p[nt..].to_vec()).unwrap();
            nell(&bt, &bp, g.constant(dr.x.clone()), Some(g.constant(dr.eps.clone())))
        },
        &params,
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
