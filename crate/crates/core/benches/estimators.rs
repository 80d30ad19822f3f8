//! Parallel vs sequential execution of the Monte Carlo estimators and of
//! trajectory ensembles.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use slfv_core::chain::run;
use slfv_core::diagnostics::{total_mass, Method, Snapshot};
use slfv_core::exec::{self, Execution};
use slfv_core::geometry::{union_volume_with, VolumeMethod};
use slfv_core::rng::{substream, Purpose};
use slfv_core::Params;

const POLICIES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn union_volume(c: &mut Criterion) {
    let t = run(Params::new(3, 1.0, 0.5, 1.0, 1.0, 1), 200, &mut []).unwrap();
    let u = t.state().cluster().to_union();
    let mut g = c.benchmark_group("union_volume_200k");
    for (name, e) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut rng = substream(1, Purpose::Estimator, 0);
                black_box(union_volume_with(&u, VolumeMethod::MonteCarlo { samples: 200_000 }, &mut rng, e).unwrap())
            })
        });
    }
    g.finish();
}

fn mass(c: &mut Criterion) {
    let t = run(Params::new(2, 1.0, 0.5, 1.0, 1.0, 2), 300, &mut []).unwrap();
    let mut g = c.benchmark_group("total_mass_100k");
    for (name, e) in POLICIES {
        exec::set_default_execution(e);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut rng = substream(2, Purpose::Estimator, 0);
                black_box(total_mass(&Snapshot::new(t.state()), Method::MonteCarlo { samples: 100_000 }, &mut rng).unwrap())
            })
        });
    }
    exec::set_default_execution(Execution::Parallel);
    g.finish();
}

fn ensemble(c: &mut Criterion) {
    let mut g = c.benchmark_group("ensemble_32x500");
    g.sample_size(10);
    for (name, e) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let n = exec::map_indexed(e, 32, |i| {
                    run(Params::new(2, 1.0, 0.5, 1.0, 1.0, i as u64), 500, &mut []).unwrap().state().positive_count()
                });
                black_box(n)
            })
        });
    }
    g.finish();
}

criterion_group!(benches, union_volume, mass, ensemble);
criterion_main!(benches);
