use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use ntclust::par::Execution;
use ntclust::{assign_batch_with, init_model, HyperParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn batch(m: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(m, k, |_, _| StandardNormal.sample(&mut rng))
}

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("assign_batch");
    group.sample_size(10);
    for &(m, k) in &[(40, 200), (128, 256)] {
        let hyper = HyperParams {
            m,
            identity: true,
            ..HyperParams::default()
        };
        let model = init_model(m, &hyper, 7).expect("model");
        let q = batch(m, k, 11);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let id = BenchmarkId::new(format!("{exec:?}"), format!("{m}x{k}"));
            group.bench_with_input(id, &q, |b, q| {
                b.iter(|| assign_batch_with(q, &model.params, &hyper, exec).expect("assign"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, assignment);
criterion_main!(benches);
