use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::hint::black_box;

use fusion_core::toy::mmd_squared;
use fusion_core::*;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn cloud(seed: u64, n: usize, dim: usize, shift: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    shift + z
                })
                .collect()
        })
        .collect()
}

fn mmd(c: &mut Criterion) {
    let mut group = c.benchmark_group("mmd_squared");
    for n in [256, 1024] {
        let a = cloud(1, n, 16, 0.0);
        let b = cloud(2, n, 16, 0.5);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |bench, _| {
                bench.iter(|| mmd_squared(black_box(&a), black_box(&b), 1.0, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn scored_batch(c: &mut Criterion) {
    let world = ToyWorld::wide(16);
    let backend = ToyBackend::new(world.clone(), 999);
    let sampler = Sampler::new(SamplerConfig::default(), &backend).unwrap();
    let inputs =
        ConceptInputs::from_backend(&backend, ConceptRef::new("A"), ConceptRef::new("B")).unwrap();
    let thetas: Vec<FusionParams> = (0..64)
        .map(|i| FusionParams {
            alpha: f64::from(i) / 63.0,
            ..FusionParams::default()
        })
        .collect();

    let mut group = c.benchmark_group("scored_hsp_batch");
    group.sample_size(20);
    for (name, exec) in MODES {
        // the inner MMD runs sequentially so only the batch level differs
        let provider = ToyProvider::new(&world).with_execution(Execution::Sequential);
        group.bench_function(name, |bench| {
            bench.iter(|| {
                exec.map(&thetas, |theta| {
                    let out = sampler.hsp(&inputs, theta, Strategies::default()).unwrap();
                    scoring::evaluate(
                        &out.decoded,
                        &inputs,
                        &provider,
                        NormalizationBounds::default(),
                    )
                    .unwrap()
                    .total
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, mmd, scored_batch);
criterion_main!(benches);
