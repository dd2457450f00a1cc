//! Fast numeric self-checks: convex-function calculus, exact objective
//! identities, gradient checks and the small-scale limits.
//!
//! Each check builds small random networks and batches from fixed seeds, so a
//! failure is reproducible.

use ilvm_core::divergences::{dre_bound_latent, FDivergence};
use ilvm_core::models::{Activation, Conditional, MlpSpec, RatioEstimator, ScaleMode};
use ilvm_core::objectives::{
    cycle_loss, dm_loss_latent, dm_loss_observed, dre_latent, dre_observed, gan_objective, kl_dm_latent, kl_dre_latent, kliep_objective,
    nell, nelp, Direction, DmLoss, GanBatch, GanMode, LimitConstants,
};
use ilvm_core::rng::Stream;
use ilvm_core::tensor::{grad_check, Graph, Tensor, TensorError, Var};
use ilvm_core::Family;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// A tanh mapping with a random first-layer bias so that nothing sits at a
/// symmetric point.
pub fn random_mapping(din: usize, dout: usize, family: Family, scale: f64, seed: u64) -> Conditional {
    let spec = MlpSpec::new(vec![din, 6, dout], Activation::Tanh, seed);
    let mut c = Conditional::new(spec, family, ScaleMode::Fixed(scale)).expect("valid mapping");
    let mut s = Stream::new(seed, 60);
    c.params.set("b0", Tensor::vector(s.normal_tensor(1, 6).into_data())).expect("bias shape");
    c
}

/// A ratio estimator with a random head (the default head is zero).
pub fn random_ratio(primary: usize, cond: usize, ignore: bool, seed: u64) -> RatioEstimator {
    let mut r = RatioEstimator::new(primary, cond, &[6], Activation::Tanh, ignore, seed).expect("valid ratio net");
    let mut s = Stream::new(seed, 61);
    r.params.set("w1", s.normal_tensor(6, 1)).expect("head shape");
    r.params.set("b1", Tensor::vector(vec![s.standard_normal()])).expect("bias shape");
    r
}

/// Log-spaced grid on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub fn convex_calculus() -> Vec<Check> {
    let grid = log_grid(1e-3, 1e3, 200);
    let mut out = Vec::new();
    for fdiv in [FDivergence::Kl, FDivergence::Gan] {
        let closed = |u: f64| match fdiv {
            FDivergence::Kl => u,
            FDivergence::Gan => -(1.0 - 1.0 / (1.0 + (-u.ln()).exp())).ln(),
        };
        let worst = grid
            .iter()
            .map(|&u| {
                let numeric = fdiv.fstar(fdiv.fprime(u)).unwrap_or(f64::NAN);
                let stable = fdiv.fstar_of_fprime(u);
                (numeric - closed(u)).abs().max((stable - closed(u)).abs())
            })
            .fold(0.0, f64::max);
        out.push(Check::new(format!("{} conjugate composition", fdiv.name()), worst <= 1e-10, format!("max error {worst:.2e}")));
        let convex = grid.windows(3).all(|w| {
            let (a, b, c) = (w[0], w[1], w[2]);
            // Second divided difference on the non-uniform grid.
            let d = (fdiv.f(c) - fdiv.f(b)) / (c - b) - (fdiv.f(b) - fdiv.f(a)) / (b - a);
            d >= -1e-9
        });
        // The GAN generator as written is offset by −log 4; f(1) is checked
        // against that offset, which does not affect convexity or the bound.
        let anchor = match fdiv {
            FDivergence::Kl => 0.0,
            FDivergence::Gan => -(4f64.ln()),
        };
        let at_one = fdiv.f(1.0) - anchor;
        out.push(Check::new(
            format!("{} convex, normalized f(1) = 0", fdiv.name()),
            convex && at_one.abs() <= 1e-15,
            format!("f(1) = {}", fdiv.f(1.0)),
        ));
    }
    out
}

struct Batch {
    x: Tensor,
    z: Tensor,
    eps: Tensor,
    xi: Tensor,
}

fn batch(n: usize, d: usize, k: usize, seed: u64) -> Batch {
    let mut s = Stream::new(seed, 62);
    Batch {
        x: s.normal_tensor(n, d),
        z: s.normal_tensor(n, k),
        eps: s.normal_tensor(n, k),
        xi: s.normal_tensor(n, d),
    }
}

/// Largest absolute gap of each exact identity over `pairs` random draws.
pub fn identities(pairs: u64) -> Vec<Check> {
    let (d, k, n) = (4, 2, 8);
    let mut gaps = [0.0f64; 4];
    for seed in 0..pairs {
        let theta = random_mapping(k, d, Family::Gaussian, 0.3, 7 * seed);
        let phi = random_mapping(d, k, Family::Gaussian, 0.3, 7 * seed + 1);
        let alpha = random_ratio(k, d, false, 7 * seed + 2);
        let b = batch(n, d, k, seed);
        let g = Graph::new();
        let (x, z, eps) = (g.constant(b.x.clone()), g.constant(b.z.clone()), g.constant(b.eps.clone()));
        let (bt, bp, ba) = (theta.bind(&g, false), phi.bind(&g, false), alpha.bind(&g, false));
        let eval = |r: Result<Var<'_>, TensorError>| r.map(|v| v.item()).unwrap_or(f64::NAN);

        let c = eval(dm_loss_latent(DmLoss::C, &ba, &bp, x, Some(eps)));
        gaps[0] = gaps[0].max((c - eval(kl_dm_latent(&ba, &bp, x, Some(eps)))).abs());

        let gb = GanBatch { x, z, eps: Some(eps), xi: None };
        let gan = eval(gan_objective(Direction::Reverse, GanMode::Stochastic, &ba, &bt, &bp, gb));
        let z_post = bp.sample(x, eps).expect("posterior sample");
        let bound = eval(dre_bound_latent(FDivergence::Gan, |z, x| ba.log_ratio(z, x), x, z_post, z));
        gaps[1] = gaps[1].max((gan - bound).abs());

        let det_theta = random_mapping(k, d, Family::Gaussian, 0.0, 7 * seed + 3);
        let det_phi = random_mapping(d, k, Family::Gaussian, 0.0, 7 * seed + 4);
        let blind = random_ratio(k, d, true, 7 * seed + 5);
        let (dt, dp, bl) = (det_theta.bind(&g, false), det_phi.bind(&g, false), blind.bind(&g, false));
        let full = GanBatch {
            x,
            z,
            eps: Some(eps),
            xi: Some(g.constant(b.xi.clone())),
        };
        let s = eval(gan_objective(Direction::Reverse, GanMode::Stochastic, &bl, &dt, &dp, full));
        let det = eval(gan_objective(Direction::Reverse, GanMode::Deterministic, &bl, &dt, &dp, full));
        gaps[2] = gaps[2].max(if s.to_bits() == det.to_bits() { 0.0 } else { (s - det).abs().max(f64::MIN_POSITIVE) });

        let kliep = eval(kliep_objective(&ba, &bp, x, Some(eps), z, 1.0));
        gaps[3] = gaps[3].max((kliep - eval(kl_dre_latent(&ba, &bp, x, Some(eps), z))).abs());
    }
    let names = [
        "combined DM loss equals frozen-ratio KL",
        "GAN objective equals GAN-form bound",
        "stochastic equals deterministic (bitwise)",
        "KLIEP at unit multiplier equals KL bound",
    ];
    names
        .iter()
        .zip(gaps)
        .enumerate()
        .map(|(i, (name, gap))| {
            let tol = if i == 2 { 0.0 } else { 1e-12 };
            Check::new(*name, gap <= tol, format!("max gap {gap:.2e} over {pairs} draws"))
        })
        .collect()
}

/// The objectives covered by [`gradient_checks`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Nell,
    Nelp,
    DreLatent(FDivergence),
    DreObserved(FDivergence),
    DmLatent(DmLoss),
    DmObserved(DmLoss),
    Cycle(Direction),
}

impl Objective {
    pub const ALL: [Objective; 14] = [
        Objective::Nell,
        Objective::Nelp,
        Objective::DreLatent(FDivergence::Kl),
        Objective::DreLatent(FDivergence::Gan),
        Objective::DreObserved(FDivergence::Kl),
        Objective::DreObserved(FDivergence::Gan),
        Objective::DmLatent(DmLoss::A),
        Objective::DmLatent(DmLoss::B),
        Objective::DmLatent(DmLoss::C),
        Objective::DmObserved(DmLoss::A),
        Objective::DmObserved(DmLoss::B),
        Objective::DmObserved(DmLoss::C),
        Objective::Cycle(Direction::Reverse),
        Objective::Cycle(Direction::Forward),
    ];

    /// Whether the objective trains the ratio nets (true) or the mappings.
    fn trains_ratios(self) -> bool {
        matches!(self, Objective::DreLatent(_) | Objective::DreObserved(_))
    }
}

/// Networks and draws for one gradient check.
struct GradCase {
    theta: Conditional,
    phi: Conditional,
    alpha: RatioEstimator,
    beta: RatioEstimator,
    batch: Batch,
}

impl GradCase {
    fn new(seed: u64) -> Self {
        let (d, k, n) = (3, 2, 5);
        Self {
            theta: random_mapping(k, d, Family::Gaussian, 0.4, 11 * seed),
            phi: random_mapping(d, k, Family::Gaussian, 0.3, 11 * seed + 1),
            alpha: random_ratio(k, d, false, 11 * seed + 2),
            beta: random_ratio(d, k, false, 11 * seed + 3),
            batch: batch(n, d, k, seed + 1000),
        }
    }

    /// The objective with the trained group taken from `vars` and the other
    /// group entering as constants.
    fn value<'g>(&self, objective: Objective, g: &'g Graph, vars: &[Var<'g>]) -> Result<Var<'g>, TensorError> {
        let attach_err = |e: ilvm_core::models::ModelError| TensorError::Domain {
            op: "attach",
            detail: e.to_string(),
        };
        let (bt, bp, ba, bb) = if objective.trains_ratios() {
            let split = self.alpha.params.len();
            (
                self.theta.bind(g, false),
                self.phi.bind(g, false),
                self.alpha.attach(vars[..split].to_vec()).map_err(attach_err)?,
                self.beta.attach(vars[split..].to_vec()).map_err(attach_err)?,
            )
        } else {
            let split = self.theta.params.len();
            (
                self.theta.attach(vars[..split].to_vec()).map_err(attach_err)?,
                self.phi.attach(vars[split..].to_vec()).map_err(attach_err)?,
                self.alpha.bind(g, false),
                self.beta.bind(g, false),
            )
        };
        let b = &self.batch;
        let (x, z) = (g.constant(b.x.clone()), g.constant(b.z.clone()));
        let (eps, xi) = (Some(g.constant(b.eps.clone())), Some(g.constant(b.xi.clone())));
        match objective {
            Objective::Nell => nell(&bt, &bp, x, eps),
            Objective::Nelp => nelp(&bt, &bp, z, xi),
            Objective::DreLatent(fdiv) => dre_latent(fdiv, &ba, &bp, x, eps, z),
            Objective::DreObserved(fdiv) => dre_observed(fdiv, &bb, &bt, z, xi, x),
            Objective::DmLatent(v) => dm_loss_latent(v, &ba, &bp, x, eps),
            Objective::DmObserved(v) => dm_loss_observed(v, &bb, &bt, z, xi),
            Objective::Cycle(Direction::Reverse) => cycle_loss(Direction::Reverse, &bt, &bp, x, 2),
            Objective::Cycle(Direction::Forward) => cycle_loss(Direction::Forward, &bt, &bp, z, 2),
        }
    }
}

/// Maximum relative finite-difference error of one objective on one seeded
/// set of networks and draws. Only the parameters the objective trains are
/// perturbed; the others enter as constants.
pub fn gradient_error(objective: Objective, seed: u64) -> Result<f64, String> {
    let case = GradCase::new(seed);
    let params = trained_params(objective, seed);
    grad_check(|g, vars| case.value(objective, g, vars), &params, 1e-6)
        .map(|r| r.max_rel_error)
        .map_err(|e| e.to_string())
}

/// Initial values of the parameters `objective` trains in the seeded case
/// used by [`gradient_error`].
pub fn trained_params(objective: Objective, seed: u64) -> Vec<Tensor> {
    let case = GradCase::new(seed);
    let (first, second) = if objective.trains_ratios() {
        (&case.alpha.params, &case.beta.params)
    } else {
        (&case.theta.params, &case.phi.params)
    };
    first.values().chain(second.values()).cloned().collect()
}

/// Objective value and reverse-mode gradient at `params`, in the layout of
/// [`trained_params`].
pub fn value_and_gradient(objective: Objective, seed: u64, params: &[Tensor]) -> Result<(f64, Vec<Tensor>), TensorError> {
    let case = GradCase::new(seed);
    let g = Graph::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = case.value(objective, &g, &vars)?;
    let grads = g.backward(root)?;
    Ok((root.item(), vars.iter().map(|&v| grads.get(v)).collect()))
}

pub fn gradient_checks(seeds: u64) -> Vec<Check> {
    Objective::ALL
        .iter()
        .map(|&o| {
            let mut worst = 0.0f64;
            for seed in 0..seeds {
                match gradient_error(o, seed) {
                    Ok(e) => worst = worst.max(e),
                    Err(e) => return Check::new(format!("gradient {o:?}"), false, e),
                }
            }
            Check::new(format!("gradient {o:?}"), worst <= 1e-4, format!("max relative error {worst:.2e}"))
        })
        .collect()
}

/// Which log-density term a limit sweep drives towards its cycle loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LimitSide {
    /// `nell` as the posterior scale `t` shrinks.
    Likelihood,
    /// `nelp` as the likelihood scale `τ` shrinks.
    Posterior,
}

/// Rows of `v` whose round-trip residual is at least `margin` in every
/// coordinate, up to `n` of them.
fn away_from_kink(v: &Tensor, roundtrip: &Tensor, margin: f64, n: usize) -> Tensor {
    let keep: Vec<usize> = (0..v.rows())
        .filter(|&i| v.row(i).iter().zip(roundtrip.row(i)).all(|(a, b)| (a - b).abs() >= margin))
        .take(n)
        .collect();
    assert_eq!(keep.len(), n, "not enough rows clear of the kink");
    v.gather_rows(&keep)
}

/// `|term − (γ · cycle + δ)|` at each scale in `scales`, on one fixed batch
/// with antithetic noise (each draw appears with both signs), which cancels
/// the odd orders of the expansion in the scale.
///
/// The ℓ1 cycle loss has a kink wherever a residual coordinate is zero and
/// the expansion is only first order across it, so the batch keeps rows whose
/// residuals stay clear of zero. The Gaussian case uses the same rows.
pub fn limit_errors(side: LimitSide, family: Family, scales: &[f64], seed: u64) -> Vec<f64> {
    let (d, k, half) = (4, 2, 16);
    let fixed = 0.5;
    let rho = family.norm_order();
    let pool = batch(64 * half, d, k, seed);
    let (mu, m) = (random_mapping(k, d, family, fixed, seed), random_mapping(d, k, family, fixed, seed + 1));
    let round_x = mu.mean_of(&m.mean_of(&pool.x).expect("mean")).expect("mean");
    let round_z = m.mean_of(&mu.mean_of(&pool.z).expect("mean")).expect("mean");
    let b = Batch {
        x: away_from_kink(&pool.x, &round_x, 0.5, half),
        z: away_from_kink(&pool.z, &round_z, 0.5, half),
        eps: pool.eps,
        xi: pool.xi,
    };
    let mirrored = |t: &Tensor| {
        let mut v = t.data().to_vec();
        v.extend(t.data().iter().map(|e| -e));
        Tensor::matrix(2 * half, t.cols(), v).expect("stacked rows")
    };
    let twice = |t: &Tensor| {
        let mut v = t.data().to_vec();
        v.extend_from_slice(t.data());
        Tensor::matrix(2 * half, t.cols(), v).expect("stacked rows")
    };
    let noise = |rows: usize, cols: usize| {
        let mut s = Stream::new(seed, 63);
        family.sample_noise(&mut s, rows, cols)
    };
    scales
        .iter()
        .map(|&s| {
            let (theta, phi) = match side {
                LimitSide::Likelihood => (
                    random_mapping(k, d, family, fixed, seed),
                    random_mapping(d, k, family, s, seed + 1),
                ),
                LimitSide::Posterior => (
                    random_mapping(k, d, family, s, seed),
                    random_mapping(d, k, family, fixed, seed + 1),
                ),
            };
            let g = Graph::new();
            let (bt, bp) = (theta.bind(&g, false), phi.bind(&g, false));
            let c = LimitConstants::new(&bt, &bp, d, k);
            let (term, cyc, gamma, delta) = match side {
                LimitSide::Likelihood => {
                    let x = g.constant(twice(&b.x));
                    let eps = g.constant(mirrored(&noise(half, k)));
                    let v = nell(&bt, &bp, x, Some(eps)).expect("nell").item();
                    (v, cycle_loss(Direction::Reverse, &bt, &bp, x, rho).expect("cycle").item(), c.gamma1, c.delta1)
                }
                LimitSide::Posterior => {
                    let z = g.constant(twice(&b.z));
                    let xi = g.constant(mirrored(&noise(half, d)));
                    let v = nelp(&bt, &bp, z, Some(xi)).expect("nelp").item();
                    (v, cycle_loss(Direction::Forward, &bt, &bp, z, rho).expect("cycle").item(), c.gamma2, c.delta2)
                }
            };
            (term - (gamma * cyc + delta)).abs()
        })
        .collect()
}

pub const LIMIT_SCALES: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

pub fn limits() -> Vec<Check> {
    let mut out = Vec::new();
    for family in [Family::Gaussian, Family::Laplace] {
        for side in [LimitSide::Likelihood, LimitSide::Posterior] {
            let e = limit_errors(side, family, &LIMIT_SCALES, 5);
            let ratios: Vec<f64> = e.windows(2).map(|w| w[0] / w[1]).collect();
            let ok = ratios.iter().all(|r| (3.5..=4.5).contains(r));
            out.push(Check::new(format!("{family:?} {side:?} limit is second order"), ok, format!("error ratios {ratios:.3?}")));
        }
    }
    out
}

/// Every check, at sizes that finish in a few seconds.
pub fn run_all() -> Vec<Check> {
    let mut out = convex_calculus();
    out.extend(identities(100));
    out.extend(gradient_checks(2));
    out.extend(limits());
    out
}
