use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use paramux::experiment::{run_experiment, ExperimentConfig, ObjectSource, PhantomKind, PhantomSpec};
use paramux::measurement::{MeasurementModel, SensorLayout};
use paramux::reduction::{ReductionConfig, ReductionPlan};
use paramux::stats::ResponseMap;
use paramux::{CrystalParams, Dims, Exec, OpticalGeometry, StatsOptions};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn options(exec: Exec) -> StatsOptions {
    StatsOptions {
        exec,
        ..StatsOptions::default()
    }
}

fn response_map(c: &mut Criterion) {
    let geom = OpticalGeometry::default();
    let crystal = CrystalParams::from_dimensionless(100.0, 0.4, 1.0).unwrap();
    let mut group = c.benchmark_group("response_map");
    for side in [64, 128] {
        let dims = Dims::square(side).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, side), &dims, |b, &dims| {
                b.iter(|| ResponseMap::new(dims, &geom, &crystal, options(exec)).unwrap())
            });
        }
    }
    group.finish();
}

fn reduction_plan(c: &mut Criterion) {
    let geom = OpticalGeometry::default();
    let crystal = CrystalParams::from_dimensionless(100.0, 0.4, 1.0).unwrap();
    let dims = Dims::square(64).unwrap();
    let mut group = c.benchmark_group("reduction_plan");
    for (name, exec) in MODES {
        let map = ResponseMap::new(dims, &geom, &crystal, options(exec)).unwrap();
        let model = MeasurementModel::new(&SensorLayout::overlapping(), map, [0.0; 3], 10.0).unwrap();
        group.bench_function(name, |b| {
            b.iter(|| ReductionPlan::new(&model, &ReductionConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("experiment_64x64_32_seeds");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = ExperimentConfig {
            object: ObjectSource::Phantom(PhantomSpec {
                kind: PhantomKind::TwoSlits,
                dims: Dims::square(64).unwrap(),
                slit_width: None,
                slit_separation: None,
                slit_height: None,
                block: 2,
            }),
            stats: options(exec),
            seeds: 32,
            taus: vec![0.0, 0.5],
            save_images: false,
            ..ExperimentConfig::default()
        };
        group.bench_function(name, |b| b.iter(|| run_experiment(&cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, response_map, reduction_plan, monte_carlo);
criterion_main!(benches);
