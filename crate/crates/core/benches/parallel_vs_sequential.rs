use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tcpx::dataset::{generate_synthetic, SyntheticConfig};
use tcpx::explain::explain_many;
use tcpx::gbdt::{rank_build, TrainingConfig};
use tcpx::pipeline::{sweep_builds, train_for_build, ExperimentConfig};
use tcpx::similarity::pairwise_similarity_with;
use tcpx::Parallelism;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn config(par: Parallelism) -> ExperimentConfig {
    ExperimentConfig {
        training: TrainingConfig {
            num_iterations: 30,
            ..TrainingConfig::default()
        },
        parallelism: par,
        ..ExperimentConfig::default()
    }
}

fn bench(c: &mut Criterion) {
    let ds = generate_synthetic(&SyntheticConfig::new(30, 40, 10), 0).unwrap();
    let trained = train_for_build(&ds, 30, &config(Parallelism::Sequential), Parallelism::Sequential).unwrap();
    let bg = trained.background(&config(Parallelism::Sequential)).unwrap();
    let records: Vec<_> = trained.split.test.records.iter().collect();
    let ranking = rank_build(&trained.model, &trained.split.test).unwrap();
    let explanations = explain_many(&trained.model, &bg, &records, Parallelism::Sequential).unwrap();

    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10).measurement_time(Duration::from_secs(5));
    for (name, par) in MODES {
        g.bench_with_input(BenchmarkId::new("train", name), &par, |b, &par| {
            b.iter(|| train_for_build(&ds, 30, &config(par), par).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("explain_many", name), &par, |b, &par| {
            b.iter(|| explain_many(&trained.model, &bg, &records, par).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("pairwise_similarity", name), &par, |b, &par| {
            b.iter(|| pairwise_similarity_with(&explanations, &ranking, None, par).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("sweep", name), &par, |b, &par| {
            b.iter(|| sweep_builds(&ds, &config(par)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
