use std::path::PathBuf;

use authnet::classifier::{train_samples, TrainSample, VerifierConfig};
use authnet::embedder::{EmbeddingBackend, StubHashBackend};
use authnet::metrics::{auc, eer, roc};
use authnet::preprocess::{FaceDetector, HaarDetector, HaarParams};
use authnet_bench::{scores, sequence};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn face() -> image::RgbImage {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/faces/face_01.png");
    image::open(path).expect("fixture face").to_rgb8()
}

fn haar(c: &mut Criterion) {
    let det = HaarDetector::frontal_face(HaarParams::default());
    let img = face();
    c.bench_function("haar_detect_face", |b| b.iter(|| det.detect_face(black_box(&img))));
}

fn stub_embed(c: &mut Criterion) {
    let img = image::imageops::resize(&face(), 224, 224, image::imageops::FilterType::Triangle);
    let mut group = c.benchmark_group("stub_embed");
    for d in [128usize, 2622] {
        let backend = StubHashBackend::new(d, 8, 0);
        group.throughput(Throughput::Elements(d as u64));
        group.bench_with_input(BenchmarkId::from_parameter(d), &backend, |b, be| {
            b.iter(|| be.embed(black_box(&img)).unwrap())
        });
    }
    group.finish();
}

fn lstm(c: &mut Criterion) {
    let config = VerifierConfig {
        hidden_size: vec![32, 16, 8, 4],
        layers: 4,
        dimension: 256,
        epochs: 1,
        batch_size: 16,
        ..VerifierConfig::default()
    };
    let seqs: Vec<_> = (0..64).map(|i| sequence(config.timesteps, config.dimension, i)).collect();
    let samples: Vec<TrainSample> = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| TrainSample::from_sequence(s, i % 5 == 0, 0))
        .collect();
    c.bench_function("lstm_train_epoch_64x20x256", |b| {
        b.iter(|| train_samples(black_box(&samples), &config).unwrap())
    });
    let model = train_samples(&samples, &config).unwrap();
    let refs: Vec<_> = seqs.iter().collect();
    c.bench_function("lstm_score_64x20x256", |b| b.iter(|| model.score_batch(black_box(&refs)).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("roc_auc_eer");
    for n in [1_000usize, 100_000] {
        let s = scores(n, 9);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| {
                let curve = roc(black_box(s)).unwrap();
                (auc(&curve), eer(&curve))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, haar, stub_embed, lstm, metrics);
criterion_main!(benches);
