use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ilvm_bench::{banana_trainer, random_matrix};
use ilvm_core::models::{Activation, Conditional, MlpSpec, ScaleMode};
use ilvm_core::trainer::Mode;
use ilvm_core::{Family, Graph};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for (m, k, n) in [(64, 64, 256), (64, 256, 256), (256, 256, 256)] {
        let (a, b) = (random_matrix(m, k, 1), random_matrix(k, n, 2));
        group.bench_with_input(BenchmarkId::from_parameter(format!("{m}x{k}x{n}")), &(a, b), |bench, (a, b)| {
            bench.iter(|| {
                let g = Graph::new();
                black_box(g.constant(a.clone()).matmul(g.constant(b.clone())).unwrap().value())
            })
        });
    }
    group.finish();
}

fn mlp_backward(c: &mut Criterion) {
    let spec = MlpSpec::new(vec![2, 256, 256, 64], Activation::Tanh, 0);
    let net = Conditional::new(spec, Family::Gaussian, ScaleMode::Fixed(0.1)).unwrap();
    let z = random_matrix(64, 2, 3);
    c.bench_function("mlp_forward_backward_64", |bench| {
        bench.iter(|| {
            let g = Graph::new();
            let bound = net.bind(&g, true);
            let loss = bound.mean(g.constant(z.clone())).unwrap().square().unwrap().mean().unwrap();
            black_box(g.backward(loss).unwrap())
        })
    });
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    for mode in [Mode::Sjmvi, Mode::Cyclegan, Mode::VaeBaseline] {
        let mut trainer = banana_trainer(mode);
        group.bench_function(format!("{mode:?}"), |bench| bench.iter(|| black_box(trainer.step().unwrap())));
    }
    group.finish();
}

criterion_group!(benches, matmul, mlp_backward, train_step);
criterion_main!(benches);
