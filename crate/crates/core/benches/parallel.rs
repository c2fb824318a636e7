//! One worker against the default pool on the three hot paths. Build with
//! `--no-default-features` to measure the sequential fallback instead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use iqa_forge::calibrate::{calibrate_levels, LevelTable, STAGE1_LEVELS};
use iqa_forge::distort::{gaussian_noise, DistortionKind};
use iqa_forge::metrics::{score_pairs, BuiltinMetric};
use iqa_forge::par;
use iqa_forge::sqb::{generate_sqb, k_sweep};
use iqa_forge::synthetic::{natural_scene, BenchmarkConfig, SyntheticBenchmark, BENCHMARK_ANCHOR};
use iqa_forge::ImageBuffer;

fn pools() -> [(&'static str, Option<usize>); 2] {
    [("1-worker", Some(1)), ("default", None)]
}

fn bench_score_pairs(c: &mut Criterion) {
    let refs: Vec<ImageBuffer> = (0..8).map(|s| natural_scene(128, 128, s)).collect();
    let dist: Vec<ImageBuffer> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| gaussian_noise(r, 0.05, i as u64).unwrap())
        .collect();
    let pairs: Vec<(&ImageBuffer, &ImageBuffer)> = refs.iter().zip(&dist).collect();
    let mut g = c.benchmark_group("score_pairs/ms_ssim/8x128");
    for (name, workers) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_workers(workers, || score_pairs(&BuiltinMetric::MsSsim, black_box(&pairs)))
                    .unwrap()
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn bench_calibration(c: &mut Criterion) {
    let img = natural_scene(96, 96, 4);
    let table = LevelTable::standard();
    let mut g = c.benchmark_group("calibrate/noise/11-levels");
    g.sample_size(10);
    for (name, workers) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_workers(workers, || {
                    calibrate_levels("r", black_box(&img), DistortionKind::GaussianNoise, &table, STAGE1_LEVELS, 0)
                })
                .unwrap()
                .unwrap()
            })
        });
    }
    g.finish();
}

fn bench_sqb(c: &mut Criterion) {
    let bench = SyntheticBenchmark::generate(&BenchmarkConfig::standard(5_000), 1);
    let ks = [1.0, 60.0, 400.0, 4.0e4, 8.0e6];
    let mut g = c.benchmark_group("sqb/n5000");
    g.sample_size(10);
    for (name, workers) in pools() {
        g.bench_function(BenchmarkId::new("generate", name), |b| {
            b.iter(|| {
                par::with_workers(workers, || generate_sqb(&bench.segments, &bench.scores, 4.0e4, BENCHMARK_ANCHOR))
                    .unwrap()
                    .unwrap()
            })
        });
        g.bench_function(BenchmarkId::new("k_sweep", name), |b| {
            b.iter(|| {
                par::with_workers(workers, || k_sweep(&bench.segments, &bench.scores, &ks, BENCHMARK_ANCHOR))
                    .unwrap()
                    .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench_score_pairs, bench_calibration, bench_sqb);
criterion_main!(benches);
