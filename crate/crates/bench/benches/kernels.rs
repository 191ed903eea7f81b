//! Throughput of the simulator's hot paths: network passes, local training,
//! filter features, robust aggregation and defense-model training.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fedguard_bench::{cnn, dataset, mlp, models};
use fedguard_core::aggregation::{bulyan, coordinate_median, fedavg, krum_select};
use fedguard_core::defense::{extract_features, train_defense_svm, FeatureSample, SvmParams};
use fedguard_core::{Features, Identity, TrainConfig};

fn network(c: &mut Criterion) {
    let data = dataset(20);
    let batch = data.as_batch();
    let one_epoch = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    for (name, net) in [("mlp", mlp()), ("cnn", cnn())] {
        let params = net.init(1);
        c.bench_function(&format!("{name}/forward_200"), |b| {
            b.iter(|| net.forward(black_box(&params), &batch).unwrap())
        });
        c.bench_function(&format!("{name}/gradient_200"), |b| {
            b.iter(|| net.gradient(black_box(&params), &batch).unwrap())
        });
        c.bench_function(&format!("{name}/train_epoch_200"), |b| {
            b.iter(|| net.train_local(black_box(&params), &data, &one_epoch, 7).unwrap())
        });
    }
}

fn features(c: &mut Criterion) {
    let data = dataset(100);
    let net = mlp();
    let batch = data.as_batch();
    let a = net.forward(&net.init(1), &batch).unwrap();
    let b = net.forward(&net.init(2), &batch).unwrap();
    c.bench_function("features/extract_1000x10", |bench| {
        bench.iter(|| extract_features(black_box(&a), black_box(&b), data.labels()).unwrap())
    });
}

fn aggregation(c: &mut Criterion) {
    let net = mlp();
    let ups = models(&net, 30);
    c.bench_function("aggregate/fedavg_30", |b| b.iter(|| fedavg(black_box(&ups)).unwrap()));
    c.bench_function("aggregate/median_30", |b| b.iter(|| coordinate_median(black_box(&ups)).unwrap()));
    c.bench_function("aggregate/krum_30_f7", |b| b.iter(|| krum_select(black_box(&ups), 7, 1).unwrap()));
    c.bench_function("aggregate/bulyan_30_f7", |b| b.iter(|| bulyan(black_box(&ups), 7).unwrap()));
}

fn svm(c: &mut Criterion) {
    let samples: Vec<FeatureSample> = (0..100)
        .map(|i| {
            let benign = i % 2 == 0;
            let t = f64::from(i) / 100.0;
            FeatureSample {
                x: Features {
                    mse: if benign { 0.001 * t } else { 0.05 + 0.1 * t },
                    tcd: if benign { 0.01 * t } else { 0.3 + 0.5 * t },
                },
                y: if benign { Identity::Benign } else { Identity::Malicious },
            }
        })
        .collect();
    c.bench_function("defense/svm_100_samples", |b| {
        b.iter_batched(
            || samples.clone(),
            |s| train_defense_svm(&s, &SvmParams::default(), 3).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, network, features, aggregation, svm);
criterion_main!(benches);
