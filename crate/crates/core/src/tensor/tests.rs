use proptest::prelude::*;

use super::*;
use crate::rng::Stream;

fn random(stream: &mut Stream, rows: usize, cols: usize) -> Tensor {
    stream.normal_tensor(rows, cols)
}

#[test]
fn identity_matmul() {
    let mut s = Stream::new(0, 1);
    let a = random(&mut s, 3, 4);
    let g = Graph::new();
    let out = g.constant(Tensor::eye(3)).matmul(g.constant(a.clone())).unwrap();
    assert_eq!(out.value(), a);
}

#[test]
fn sigmoid_at_zero() {
    let g = Graph::new();
    assert_eq!(g.scalar(0.0).sigmoid().unwrap().item(), 0.5);
}

#[test]
fn softplus_difference_is_identity() {
    let g = Graph::new();
    for x in [-3.0, 0.0, 3.0] {
        let v = g.scalar(x);
        let d = v.softplus().unwrap().sub(v.neg().unwrap().softplus().unwrap()).unwrap();
        assert!((d.item() - x).abs() < 1e-15);
    }
}

#[test]
fn stable_log_sigmoid_forms() {
    let g = Graph::new();
    for x in [-800.0, -20.0, -1.0, 0.0, 2.5, 40.0, 800.0] {
        let v = g.scalar(x);
        let ls = v.log_sigmoid().unwrap().item();
        let l1m = v.log1m_sigmoid().unwrap().item();
        assert!((ls + softplus(-x)).abs() < 1e-15);
        assert!((l1m + softplus(x)).abs() < 1e-15);
        assert!(ls.is_finite() && l1m.is_finite());
    }
}

#[test]
fn square_gradient() {
    let g = Graph::new();
    let w = g.param(Tensor::vector(vec![1.0, 2.0]));
    let grads = g.backward(w.square().unwrap().sum().unwrap()).unwrap();
    assert_eq!(grads.get(w).data(), &[2.0, 4.0]);
}

#[test]
fn matmul_sum_gradient() {
    let mut s = Stream::new(1, 1);
    let (a, b) = (random(&mut s, 3, 4), random(&mut s, 4, 5));
    let g = Graph::new();
    let av = g.param(a);
    let bv = g.param(b.clone());
    let grads = g.backward(av.matmul(bv).unwrap().sum().unwrap()).unwrap();
    // ones(3×5) · Bᵀ: every row is the row-sums of B.
    let ga = grads.get(av);
    for i in 0..3 {
        for k in 0..4 {
            let want: f64 = b.row(k).iter().sum();
            assert!((ga.row(i)[k] - want).abs() < 1e-12);
        }
    }
}

fn mlp_loss<'g>(g: &'g Graph, p: &[Var<'g>], x: &Tensor) -> Result<Var<'g>, TensorError> {
    let x = g.constant(x.clone());
    let h = x.matmul(p[0])?.add(p[1])?.tanh()?;
    let y = h.matmul(p[2])?.add(p[3])?.tanh()?;
    y.square()?.mean()
}

#[test]
fn two_layer_tanh_mlp_matches_finite_differences() {
    let mut s = Stream::new(0, 1);
    let x = random(&mut s, 8, 3);
    let params = vec![
        random(&mut s, 3, 5),
        Tensor::vector(random(&mut s, 1, 5).into_data()),
        random(&mut s, 5, 2),
        Tensor::vector(random(&mut s, 1, 2).into_data()),
    ];
    let report = grad_check(|g, p| mlp_loss(g, p, &x), &params, 1e-6).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert_eq!(report.coordinates, 15 + 5 + 10 + 2);
}

#[test]
fn quadratic_check_is_tight() {
    let params = vec![Tensor::vector(vec![0.3, -1.2, 2.0])];
    let report = grad_check(|_, p| p[0].square()?.sum(), &params, 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-8, "{report:?}");
}

#[test]
fn dead_parameter_has_zero_error() {
    let params = vec![Tensor::vector(vec![0.3, -1.2]), Tensor::vector(vec![5.0])];
    let report = grad_check(|_, p| p[0].square()?.sum(), &params, 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-8);
    let g = Graph::new();
    let live = g.param(params[0].clone());
    let dead = g.param(params[1].clone());
    let grads = g.backward(live.square().unwrap().sum().unwrap()).unwrap();
    assert!(!grads.is_reached(dead));
    assert_eq!(grads.get(dead).data(), &[0.0]);
}

#[test]
fn grad_check_reports_offending_coordinate() {
    let params = vec![Tensor::vector(vec![1.0, 1e-7])];
    let err = grad_check(|_, p| p[0].log()?.sum(), &params, 1e-6).unwrap_err();
    match err {
        GradCheckError::NonFinite { param, index, .. } => assert_eq!((param, index), (0, 1)),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        grad_check(|_, p| p[0].sum(), &params, 0.0),
        Err(GradCheckError::BadStep(_))
    ));
}

#[test]
fn structured_errors() {
    let g = Graph::new();
    let a = g.constant(Tensor::zeros([2, 3]));
    let b = g.constant(Tensor::zeros([2, 2]));
    match a.matmul(b) {
        Err(TensorError::Shape { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!((lhs, rhs), (vec![2, 3], vec![2, 2]));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(a.add(b), Err(TensorError::Shape { op: "add", .. })));
    assert!(matches!(
        g.constant(Tensor::vector(vec![1.0, -1.0])).log(),
        Err(TensorError::Domain { .. })
    ));
    assert!(matches!(g.backward(a), Err(TensorError::NonScalarRoot(_))));
    assert!(matches!(
        g.scalar(1000.0).exp(),
        Err(TensorError::NonFinite { op: "exp", .. })
    ));
}

#[test]
fn broadcasting_rules() {
    let g = Graph::new();
    let m = g.param(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let row = g.param(Tensor::vector(vec![10.0, 20.0, 30.0]));
    let s = g.param(Tensor::scalar(2.0));
    let out = m.add(row).unwrap().mul(s).unwrap();
    assert_eq!(out.value().data(), &[22.0, 44.0, 66.0, 28.0, 50.0, 72.0]);
    let grads = g.backward(out.sum().unwrap()).unwrap();
    assert_eq!(grads.get(row).data(), &[4.0, 4.0, 4.0]);
    assert_eq!(grads.get(s).item(), 141.0);
    let col = g.constant(Tensor::vector(vec![1.0, 2.0]));
    assert!(m.add(col).is_err());
}

#[test]
fn concat_and_slices_route_gradients() {
    let g = Graph::new();
    let a = g.param(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
    let b = g.param(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    let picked = c.slice_cols(1, 2).unwrap().slice_rows(1, 2).unwrap();
    assert_eq!(picked.item(), 5.0);
    let grads = g.backward(picked.sum().unwrap().scale(3.0).unwrap()).unwrap();
    assert_eq!(grads.get(a).data(), &[0.0, 0.0]);
    assert_eq!(grads.get(b).data(), &[0.0, 0.0, 3.0, 0.0]);
    let stacked = g.concat(&[b, b], 0).unwrap();
    assert_eq!(stacked.shape(), vec![4, 2]);
}

#[test]
fn detach_blocks_gradients() {
    let g = Graph::new();
    let w = g.param(Tensor::vector(vec![3.0]));
    let loss = w.mul(w.detach()).unwrap().sum().unwrap();
    assert_eq!(g.backward(loss).unwrap().get(w).data(), &[3.0]);
}

#[test]
fn backward_is_deterministic() {
    let mut s = Stream::new(9, 1);
    let x = random(&mut s, 16, 3);
    let params = [random(&mut s, 3, 4), Tensor::zeros([4]), random(&mut s, 4, 2), Tensor::zeros([2])];
    let run = || {
        let g = Graph::new();
        let vars: Vec<_> = params.iter().map(|p| g.param(p.clone())).collect();
        let loss = mlp_loss(&g, &vars, &x).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut bits = vec![loss.item().to_bits()];
        for v in &vars {
            bits.extend(grads.get(*v).data().iter().map(|d| d.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn backward_is_linear() {
    let mut s = Stream::new(4, 1);
    for _ in 0..20 {
        let x = random(&mut s, 6, 3);
        let params = [random(&mut s, 3, 4), Tensor::zeros([4]), random(&mut s, 4, 2), Tensor::zeros([2])];
        let (a, b) = (s.standard_normal(), s.standard_normal());
        let grad_of = |combine: &dyn Fn(f64, f64) -> (f64, f64)| {
            let g = Graph::new();
            let vars: Vec<_> = params.iter().map(|p| g.param(p.clone())).collect();
            let f = mlp_loss(&g, &vars, &x).unwrap();
            let h = vars[0].tanh().unwrap().sum().unwrap();
            let (ca, cb) = combine(a, b);
            let root = f.scale(ca).unwrap().add(h.scale(cb).unwrap()).unwrap();
            let grads = g.backward(root).unwrap();
            vars.iter().map(|v| grads.get(*v)).collect::<Vec<_>>()
        };
        let both = grad_of(&|a, b| (a, b));
        let only_f = grad_of(&|_, _| (1.0, 0.0));
        let only_h = grad_of(&|_, _| (0.0, 1.0));
        for ((gb, gf), gh) in both.iter().zip(&only_f).zip(&only_h) {
            for ((x, y), z) in gb.data().iter().zip(gf.data()).zip(gh.data()) {
                assert!((x - (a * y + b * z)).abs() < 1e-10);
            }
        }
    }
}

type UnaryOp = fn(Var<'_>) -> Result<Var<'_>, TensorError>;

/// Unary ops are checked on inputs away from their kinks.
fn unary_cases() -> Vec<(&'static str, UnaryOp, bool)> {
    vec![
        ("exp", |v| v.exp(), false),
        ("log", |v| v.log(), true),
        ("tanh", |v| v.tanh(), false),
        ("sigmoid", |v| v.sigmoid(), false),
        ("softplus", |v| v.softplus(), false),
        ("log_sigmoid", |v| v.log_sigmoid(), false),
        ("log1m_sigmoid", |v| v.log1m_sigmoid(), false),
        ("relu", |v| v.relu(), false),
        ("abs", |v| v.abs(), false),
        ("square", |v| v.square(), false),
        ("neg", |v| v.neg(), false),
        ("clamp", |v| v.clamp(-0.5, 0.5), false),
        ("scale", |v| v.scale(-1.7), false),
        ("add_scalar", |v| v.add_scalar(0.3), false),
        ("mean", |v| v.mean(), false),
        ("sum_rows", |v| v.sum_rows(), false),
        ("slice_rows", |v| v.slice_rows(1, 3), false),
        ("slice_cols", |v| v.slice_cols(0, 2), false),
        ("reshape", |v| v.reshape(&[3, 4]), false),
    ]
}

fn away_from_kinks(t: &Tensor, positive: bool) -> Tensor {
    t.map(|v| {
        let v = if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v };
        let v = if (v.abs() - 0.5).abs() < 0.05 { v * 1.2 } else { v };
        if positive { v.abs() + 0.1 } else { v }
    })
}

fn weighted<'g>(
    g: &'g Graph,
    x: Var<'g>,
    op: fn(Var<'_>) -> Result<Var<'_>, TensorError>,
    weights: &[f64],
) -> Result<Var<'g>, TensorError> {
    let y = op(x)?;
    let n = y.value().len();
    let w = g.constant(Tensor::new(y.shape(), weights[..n].to_vec())?);
    y.mul(w)?.sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn unary_ops_match_finite_differences(seed in any::<u64>()) {
        let mut s = Stream::new(seed, 1);
        let x = random(&mut s, 4, 3);
        let weights = random(&mut s, 1, 12).into_data();
        for (name, op, positive) in unary_cases() {
            let x = away_from_kinks(&x, positive);
            let report = grad_check(|g, p| weighted(g, p[0], op, &weights), &[x], 1e-6).unwrap();
            prop_assert!(report.max_rel_error < 1e-4, "{name}: {report:?}");
        }
    }

    #[test]
    fn binary_ops_match_finite_differences(seed in any::<u64>()) {
        let mut s = Stream::new(seed, 2);
        let a = random(&mut s, 3, 4);
        let b = random(&mut s, 4, 2);
        let row = Tensor::vector(random(&mut s, 1, 4).into_data());
        let c = random(&mut s, 3, 4);
        let w = random(&mut s, 3, 4);
        let params = [a, b, row, c];
        let report = grad_check(
            |g, p| {
                let w = g.constant(w.clone());
                let e = p[0].add(p[2])?.mul(p[3])?.sub(p[0])?.mul(w)?;
                let cat = g.concat(&[e, p[3]], 1)?;
                let m = e.matmul(p[1])?.sum()?;
                let k = p[3].mul(p[2].broadcast_to(&[3, 4])?)?.sum()?;
                m.add(cat.tanh()?.sum()?)?.add(k)?.add(g.concat(&[p[0], p[3]], 0)?.square()?.mean()?)
            },
            &params,
            1e-6,
        )
        .unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
