use criterion::{criterion_group, criterion_main, Criterion};
use shiftkt_bench::fixture;
use shiftkt_core::data::{context_window, Window};
use shiftkt_core::numcore::Matrix;
use shiftkt_core::tuning::{fft, TuningConfig};

fn matmul(c: &mut Criterion) {
    for n in [32, 128] {
        let a = Matrix::from_vec(n, n, (0..n * n).map(|i| (i % 7) as f64 * 0.1).collect()).unwrap();
        let b = Matrix::from_vec(n, n, (0..n * n).map(|i| (i % 5) as f64 * 0.2).collect()).unwrap();
        c.bench_function(&format!("matmul {n}x{n}"), |bench| bench.iter(|| a.matmul(&b).unwrap()));
    }
}

/// One learner's generated layer against one epoch of full fine-tuning.
fn adapt_vs_fft(c: &mut Criterion) {
    let f = fixture(64, 100, 64).unwrap();
    let ctx = context_window(&f.windows[0]);
    c.bench_function("adapt one learner", |b| {
        b.iter(|| f.generator.adapt(&f.backbone, &ctx).unwrap())
    });

    let refs: Vec<&Window> = f.windows.iter().collect();
    let config = TuningConfig {
        epochs: 1,
        ..TuningConfig::default()
    };
    let mut group = c.benchmark_group("retrain");
    group.sample_size(10);
    group.bench_function("fft one epoch", |b| b.iter(|| fft(&f.backbone, &refs, &config).unwrap()));
    group.finish();
}

criterion_group!(benches, matmul, adapt_vs_fft);
criterion_main!(benches);
