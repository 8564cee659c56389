use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spurmin::activation::ActivationKind;
use spurmin::geometry::{fit_multistart, sample_image, FitOptions, DEFAULT_BIAS_RANGE, DEFAULT_WEIGHT_RANGE};
use spurmin::loss::Dataset;
use spurmin::spurious::{construct_for_affine_fit, sample_e_with};
use spurmin::{Architecture, Exec, LossSpec};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn points() -> Vec<Vec<f64>> {
    vec![vec![-1.0], vec![0.0], vec![2.0]]
}

fn image(c: &mut Criterion) {
    let arch = Architecture::uniform(1, vec![1], ActivationKind::Sqnl).unwrap();
    let mut group = c.benchmark_group("sample_image");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 20_000), |b| {
            b.iter(|| {
                sample_image(&arch, DEFAULT_WEIGHT_RANGE, DEFAULT_BIAS_RANGE, 20_000, 0, &points(), black_box(exec))
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn family(c: &mut Criterion) {
    let arch = Architecture::uniform(1, vec![4, 4], ActivationKind::LeakyRelu { slope: 0.01 }).unwrap();
    let data = Dataset::new(vec![vec![-1.0], vec![0.0], vec![1.0]], vec![1.0, 0.0, 1.0], None).unwrap();
    let segs: Vec<_> = arch.activations().iter().map(|a| a.default_segment(false).unwrap()).collect();
    let con = construct_for_affine_fit(&arch, &segs, &LossSpec::squared(), &data.measure, &data.target).unwrap();
    let mut group = c.benchmark_group("sample_e");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 1000), |b| {
            b.iter(|| sample_e_with(&con, 0.05, 1000, 0, black_box(exec)).unwrap())
        });
    }
    group.finish();
}

fn multistart(c: &mut Criterion) {
    let arch = Architecture::uniform(1, vec![1], ActivationKind::Relu).unwrap();
    let mut group = c.benchmark_group("fit_multistart");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = FitOptions {
            restarts: 64,
            exec,
            ..FitOptions::default()
        };
        group.bench_function(BenchmarkId::new(name, 64), |b| {
            b.iter(|| fit_multistart(&arch, &points(), black_box(&[0.0, 1.0, 0.0]), &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, image, family, multistart);
criterion_main!(benches);
