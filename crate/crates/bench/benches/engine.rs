use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nnmut_bench::blob_subject;
use nnmut_core::eval::{metric, population_metrics};
use nnmut_core::operators::apply;
use nnmut_core::search::{generate_batch, SearchConfig};
use nnmut_core::spectral::{calibrate_binning, default_layers, extract_spectrum, sample_inputs};
use nnmut_core::stats::mann_whitney_u;
use nnmut_core::{OperatorConfig, OperatorKind, SearchedParam};

fn inference(c: &mut Criterion) {
    let s = blob_subject(2);
    c.bench_function("metric/mlp64x64/1600 inputs", |b| {
        b.iter(|| metric(&s.originals.instances[0], &s.train, None).unwrap())
    });
}

fn operators(c: &mut Criterion) {
    let s = blob_subject(2);
    let orig = &s.originals.instances[0];
    let mut g = c.benchmark_group("apply");
    for kind in OperatorKind::ALL {
        let cfg = OperatorConfig::new(kind).with_ratio(0.05);
        g.bench_function(kind.to_string(), |b| {
            let mut seed = 0u64;
            b.iter(|| {
                seed += 1;
                apply(orig, &cfg, seed).unwrap()
            })
        });
    }
    g.finish();
}

fn probe_batch(c: &mut Criterion) {
    let s = blob_subject(20);
    let sc = SearchConfig::new(
        OperatorConfig::new(OperatorKind::WI),
        SearchedParam::Inhibition,
    );
    c.bench_function("probe batch/WI/m=20 generate+evaluate", |b| {
        b.iter_batched(
            || (),
            |_| {
                let batch = generate_batch(&s.originals, &sc.operator, 1, 3).unwrap();
                population_metrics(&batch, &s.train, None).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn statistics(c: &mut Criterion) {
    let a: Vec<f64> = (0..100).map(|i| 0.8 + (i % 7) as f64 * 0.01).collect();
    let b: Vec<f64> = (0..20).map(|i| 0.85 + (i % 5) as f64 * 0.01).collect();
    c.bench_function("mann-whitney/100 vs 20", |bch| {
        bch.iter(|| mann_whitney_u(&a, &b))
    });
    c.bench_function("mann-whitney exact/7 vs 20", |bch| {
        bch.iter(|| mann_whitney_u(&a[..7], &b))
    });
}

fn spectra(c: &mut Criterion) {
    let s = blob_subject(2);
    let sample = sample_inputs(&s.test, 0.1, 1).unwrap();
    let layers = default_layers(&s.originals.graph).unwrap();
    let binning = calibrate_binning(&s.originals.instances, &sample, layers, 100, 99.9).unwrap();
    c.bench_function("spectrum/2 instances/40 inputs", |b| {
        b.iter(|| extract_spectrum("o", &s.originals.instances, &sample, &binning).unwrap())
    });
}

criterion_group!(
    benches,
    inference,
    operators,
    probe_batch,
    statistics,
    spectra
);
criterion_main!(benches);
