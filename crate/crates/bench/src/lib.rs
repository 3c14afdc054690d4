//! Inputs shared by the benchmarks.

use authnet::embedder::FeatureSequence;
use authnet::metrics::ScoredSample;
use authnet::ImposterKind;
use ndarray::Array2;

/// Deterministic pseudo-random values in `[0, 1)`.
pub fn unit_stream(seed: u64) -> impl Iterator<Item = f64> {
    let mut x = seed;
    std::iter::from_fn(move || {
        x = authnet::embedder::splitmix64(x);
        Some((x >> 11) as f64 / (1u64 << 53) as f64)
    })
}

pub fn scores(n: usize, seed: u64) -> Vec<ScoredSample> {
    unit_stream(seed)
        .take(n)
        .enumerate()
        .map(|(i, u)| {
            let genuine = i % 4 == 0;
            let kind = if genuine { ImposterKind::Genuine } else { ImposterKind::DifferentPersonSameWord };
            ScoredSample::new(if genuine { 0.3 + 0.7 * u } else { 0.7 * u }, kind)
        })
        .collect()
}

pub fn sequence(t: usize, d: usize, seed: u64) -> FeatureSequence {
    let values: Vec<f32> = unit_stream(seed).take(t * d).map(|v| v as f32).collect();
    FeatureSequence {
        matrix: Array2::from_shape_vec((t, d), values).expect("shape matches"),
        source: None,
        backend_id: "bench".into(),
        pad_count: 0,
    }
}
