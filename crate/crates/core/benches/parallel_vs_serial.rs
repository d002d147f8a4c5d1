use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slidecad::detect::{scan_with, ScanConfig};
use slidecad::explain::rank_features_with;
use slidecad::inference::{FeatureTable, SignatureBackend};
use slidecad::pyramid::Slide;
use slidecad::synth::{generate_with, render, LesionShape, LesionSpec, SynthSpec};
use slidecad::{ClassLabel, Execution};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn spec() -> SynthSpec {
    SynthSpec {
        slide_id: "bench".into(),
        seed: 1,
        width: 2048,
        height: 2048,
        mpp: 1.0,
        lesions: vec![LesionSpec {
            shape: LesionShape::Blob,
            class: ClassLabel::Idc,
            center: (1024.0, 1024.0),
            axes: (700.0, 500.0),
            texture_noise: 0.1,
        }],
        noise_grain_px: 1,
        tile_size: 512,
    }
}

fn bench_render(c: &mut Criterion) {
    let spec = spec();
    let mut g = c.benchmark_group("synth_render_2048");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| black_box(render(&spec, exec).unwrap())));
    }
    g.finish();
}

fn bench_scan(c: &mut Criterion) {
    let tmp = tempfile::tempdir().unwrap();
    generate_with(&spec(), tmp.path(), Execution::Parallel).unwrap();
    let cfg = ScanConfig {
        level: 0,
        patch_size: 128,
        stride: 64,
        tissue_filter: true,
    };
    let mut g = c.benchmark_group("scan_2048_stride64");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                // Fresh slide each time so tile decoding is part of the measurement.
                let slide = Slide::open(tmp.path()).unwrap();
                black_box(scan_with(&slide, &SignatureBackend::default(), &cfg, exec).unwrap())
            })
        });
    }
    g.finish();
}

fn bench_rank(c: &mut Criterion) {
    let (n, f) = (2000, 2048);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f32> = (0..n * f).map(|_| rng.random_range(0.0f32..1.0)).collect();
    let labels = (0..n).map(|i| ClassLabel::from_index(i % 3).unwrap()).collect();
    let table = FeatureTable::new(n, f, data).unwrap().with_labels(labels).unwrap();
    let mut g = c.benchmark_group("rank_features_2000x2048");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(rank_features_with(&table, ClassLabel::NonCarcinoma, 100, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_render, bench_scan, bench_rank);
criterion_main!(benches);
