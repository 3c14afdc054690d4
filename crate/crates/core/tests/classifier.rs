use authnet::classifier::{
    load_model, save_model, train_samples, ClassifierError, TrainSample, TrainedVerifier,
    VerifierConfig,
};
use authnet::embedder::FeatureSequence;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> VerifierConfig {
    VerifierConfig {
        layers: 2,
        hidden_size: vec![8, 4],
        timesteps: 5,
        dimension: 16,
        learning_rate: 0.01,
        epochs: 60,
        batch_size: 10,
        ..Default::default()
    }
}

/// Positives sit around `+1` on the first half of the features and `−1` on the
/// second half, negatives the other way round, plus uniform noise of width
/// 0.5; any linear read-out of one time step separates them.
fn separable(n_pos: usize, n_neg: usize, seed: u64) -> Vec<(Array2<f32>, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pos + n_neg)
        .map(|i| {
            let y = i < n_pos;
            let m = Array2::from_shape_fn((5, 16), |(_, d)| {
                let sign = if (d < 8) == y { 1.0 } else { -1.0 };
                sign + rng.gen_range(-0.25f32..0.25)
            });
            (m, y)
        })
        .collect()
}

fn samples(data: &[(Array2<f32>, bool)]) -> Vec<TrainSample<'_>> {
    data.iter()
        .map(|(m, y)| TrainSample {
            features: m,
            label: *y,
            replica: 0,
            pad_count: 0,
        })
        .collect()
}

fn seq(m: &Array2<f32>) -> FeatureSequence {
    FeatureSequence {
        matrix: m.clone(),
        source: None,
        backend_id: "test".into(),
        pad_count: 0,
    }
}

fn trained() -> (TrainedVerifier, Vec<(Array2<f32>, bool)>) {
    let data = separable(10, 50, 3);
    let model = train_samples(&samples(&data), &config()).unwrap();
    (model, data)
}

#[test]
fn separable_features_are_learned() {
    let (model, data) = trained();
    assert_eq!(model.loss_curve.len(), 60);
    let correct = data
        .iter()
        .filter(|(m, y)| model.score(&seq(m)).unwrap().decision == *y)
        .count();
    let acc = correct as f64 / data.len() as f64;
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn overfit_model_accepts_its_own_positive() {
    let data = separable(1, 5, 11);
    let model = train_samples(
        &samples(&data),
        &VerifierConfig {
            epochs: 100,
            batch_size: 6,
            ..config()
        },
    )
    .unwrap();
    let p = model.score(&seq(&data[0].0)).unwrap();
    assert!(p.decision, "{p:?}");
}

#[test]
fn scores_are_open_unit_interval_and_repeatable() {
    let (model, _) = trained();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for scale in [0.0f32, 1.0, 100.0, 1e6] {
        let x = Array2::from_shape_simple_fn((5, 16), || scale * rng.gen_range(-1.0f32..1.0));
        let a = model.score(&seq(&x)).unwrap();
        let b = model.score(&seq(&x)).unwrap();
        assert!(a.score > 0.0 && a.score < 1.0, "{a:?}");
        assert_eq!(a, b);
        assert_eq!(a.decision, a.score >= 0.5);
    }
}

#[test]
fn raising_the_threshold_never_accepts_more() {
    let (model, data) = trained();
    let seqs: Vec<FeatureSequence> = data.iter().map(|(m, _)| seq(m)).collect();
    let refs: Vec<&FeatureSequence> = seqs.iter().collect();
    let mut previous: Option<Vec<bool>> = None;
    for threshold in [0.05, 0.2, 0.5, 0.8, 0.95] {
        let mut m = model.clone();
        m.config.threshold = threshold;
        let decisions: Vec<bool> = m.score_batch(&refs).unwrap().iter().map(|p| p.decision).collect();
        if let Some(prev) = &previous {
            for (before, after) in prev.iter().zip(&decisions) {
                assert!(!(!before && *after));
            }
        }
        previous = Some(decisions);
    }
}

#[test]
fn save_load_round_trip_is_bit_identical() {
    let (model, data) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, model);
    for (m, _) in data.iter().take(10) {
        let a = model.score(&seq(m)).unwrap().score;
        let b = loaded.score(&seq(m)).unwrap().score;
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn standardised_model_round_trips() {
    let data = separable(4, 8, 1);
    let model = train_samples(
        &samples(&data),
        &VerifierConfig {
            epochs: 2,
            standardize: true,
            ..config()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&model, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
}

#[test]
fn truncated_file_is_corrupt() {
    let (model, _) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_model(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [4, 20, bytes.len() - 3] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(load_model(&path), Err(ClassifierError::CorruptModelFile { .. })));
    }
}

#[test]
fn narrow_model_does_not_fit_a_wide_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<(Array2<f32>, bool)> = (0..4)
        .map(|i| (Array2::from_shape_simple_fn((20, 128), || rng.gen_range(-1.0f32..1.0)), i < 2))
        .collect();
    let narrow = VerifierConfig {
        layers: 1,
        hidden_size: vec![4],
        dimension: 128,
        epochs: 1,
        ..Default::default()
    };
    let model = train_samples(&samples(&data), &narrow).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("narrow.bin");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert!(matches!(loaded.ensure_shape(20, 2622), Err(ClassifierError::ConfigMismatch(_))));
    assert!(loaded.ensure_shape(20, 128).is_ok());
    let wide = seq(&Array2::zeros((20, 2622)));
    assert!(matches!(loaded.score(&wide), Err(ClassifierError::ShapeMismatch { .. })));
}
