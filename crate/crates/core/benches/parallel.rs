use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use pmbvs::conditionals::{GammaTarget, GramCache};
use pmbvs::exec::Execution;
use pmbvs::model::HyperParams;
use pmbvs::sampler::run_chains;
use pmbvs::simgen::{generate, Preset, SimConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn gram_precompute(c: &mut Criterion) {
    let (data, _) = generate(&SimConfig::preset(Preset::U1, 200, 1000, 1).unwrap()).unwrap();
    let mut group = c.benchmark_group("gram_precompute_p1000");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(GramCache::new(&data, exec)))
        });
    }
    group.finish();
}

fn cross_products(c: &mut Criterion) {
    let (data, _) = generate(&SimConfig::preset(Preset::U1, 400, 20_000, 2).unwrap()).unwrap();
    let gram = GramCache::on_demand();
    let r = DVector::from_fn(data.n(), |i, _| (i as f64 * 0.37).sin());
    let mut group = c.benchmark_group("xtr_p20000");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(GammaTarget::new(&data, &gram, &r, 50.0, exec)))
        });
    }
    group.finish();
}

fn multi_chain(c: &mut Criterion) {
    let (data, _) = generate(&SimConfig::preset(Preset::U2, 200, 200, 3).unwrap()).unwrap();
    let configs: Vec<HyperParams> = (0..8)
        .map(|seed| HyperParams {
            d: 5,
            r: 2,
            k: 50,
            total_iters: 40,
            burn_in: 20,
            seed,
            ..HyperParams::default()
        })
        .collect();
    let mut group = c.benchmark_group("eight_chains");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(run_chains(&data, &configs, exec)))
        });
    }
    group.finish();
}

criterion_group!(benches, gram_precompute, cross_products, multi_chain);
criterion_main!(benches);
