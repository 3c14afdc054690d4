//! Per-frame face embeddings.
//!
//! An [`EmbeddingBackend`] maps one normalised face crop to a fixed-length
//! vector. Two backends ship: [`StubHashBackend`] (deterministic, no weights)
//! and, with the `onnx` feature, [`OnnxBackend`] for pretrained VGGFace
//! weights exported to ONNX.

mod cache;
#[cfg(feature = "onnx")]
mod onnx;
mod stub;
mod variation;

use std::path::PathBuf;

use image::RgbImage;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::UtteranceKey;
use crate::preprocess::FrameSequence;

pub use cache::{decode_features, encode_features, read_feature_file, write_feature_file, FeatureCache};
#[cfg(feature = "onnx")]
pub use onnx::OnnxBackend;
pub use stub::{splitmix64, StubHashBackend};
pub use variation::{feature_variation_report, VariationRow, VariationTable};

/// Output width of the VGGFace classifier layer.
pub const VGGFACE_DIMENSION: usize = 2622;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding backend failed: {0}")]
    BackendFailure(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cosine difference is undefined for an all-zero vector")]
    ZeroVector,
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown embedding backend {0:?}")]
    UnknownBackend(String),
    #[error("weights file required for backend {backend} (set embedder.weights_path)")]
    MissingWeights { backend: String },
    #[error("corrupt feature file {path}: {reason}")]
    CorruptCache { path: PathBuf, reason: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EmbedError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EmbedError::Io {
            path: path.into(),
            source,
        }
    }
}

pub trait EmbeddingBackend: Send + Sync {
    /// Backend family, e.g. `stub-hash`.
    fn id(&self) -> &str;

    /// Identifies the backend together with every parameter that changes its
    /// output; used to key caches.
    fn fingerprint(&self) -> &str {
        self.id()
    }

    fn dimension(&self) -> usize;

    /// Must be deterministic for fixed weights.
    fn embed(&self, image: &RgbImage) -> Result<Vec<f32>, EmbedError>;
}

/// One embedding; every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidInput(format!("non-finite feature value {bad}")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `T×D` matrix of per-frame embeddings for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub matrix: Array2<f32>,
    pub source: Option<UtteranceKey>,
    pub backend_id: String,
    /// Trailing rows that embed white padding frames.
    pub pad_count: usize,
}

impl FeatureSequence {
    pub fn timesteps(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f32> {
        self.matrix.row(t)
    }

    /// Rows that embed real frames.
    pub fn content_len(&self) -> usize {
        self.timesteps().saturating_sub(self.pad_count)
    }
}

/// Embeds every frame; row `t` is `backend.embed(frame t)`.
pub fn embed_sequence(
    frames: &FrameSequence,
    backend: &dyn EmbeddingBackend,
) -> Result<FeatureSequence, EmbedError> {
    let Some(first) = frames.frames.first() else {
        return Err(EmbedError::InvalidInput("no frames to embed".into()));
    };
    if frames.frames.iter().any(|f| f.dimensions() != first.dimensions()) {
        return Err(EmbedError::InvalidInput("frames differ in size".into()));
    }
    let d = backend.dimension();
    let mut matrix = Array2::<f32>::zeros((frames.len(), d));
    for (t, frame) in frames.frames.iter().enumerate() {
        let v = backend.embed(frame)?;
        if v.len() != d {
            return Err(EmbedError::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::BackendFailure(format!(
                "non-finite output for frame {t}"
            )));
        }
        matrix.row_mut(t).assign(&ArrayView1::from(&v));
    }
    Ok(FeatureSequence {
        matrix,
        source: frames.source.clone(),
        backend_id: backend.id().to_string(),
        pad_count: frames.pad_count,
    })
}

/// `1 − t·e / (‖t‖‖e‖)`, in `[0, 2]`.
pub fn cosine_difference(t: &[f32], e: &[f32]) -> Result<f64, EmbedError> {
    if t.len() != e.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: t.len(),
            found: e.len(),
        });
    }
    let (mut dot, mut nt, mut ne) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in t.iter().zip(e) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nt += a * a;
        ne += b * b;
    }
    if nt == 0.0 || ne == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((1.0 - dot / (nt.sqrt() * ne.sqrt())).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    StubHash,
    VggfacePretrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputLayout {
    Nchw,
    Nhwc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub backend: BackendKind,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
    /// Stub backend projection seed.
    pub seed: u64,
    /// Stub backend block grid.
    pub grid: u32,
    /// Network input tensor layout.
    pub input_layout: InputLayout,
    /// Channel order the network expects.
    pub channel_order: ChannelOrder,
    /// Per-channel mean subtracted from 0–255 pixel values, in `channel_order`.
    pub mean: [f32; 3],
    /// Multiplier applied after mean subtraction.
    pub scale: f32,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::StubHash,
            dimension: VGGFACE_DIMENSION,
            weights_path: None,
            seed: 0,
            grid: 8,
            input_layout: InputLayout::Nchw,
            channel_order: ChannelOrder::Bgr,
            // VGGFace training means (B, G, R).
            mean: [93.594, 104.7624, 129.1863],
            scale: 1.0,
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self, input_size: u32) -> Result<Box<dyn EmbeddingBackend>, EmbedError> {
        if self.dimension == 0 {
            return Err(EmbedError::InvalidInput("embedder.dimension must be positive".into()));
        }
        match self.backend {
            BackendKind::StubHash => {
                if self.grid == 0 {
                    return Err(EmbedError::InvalidInput("embedder.grid must be positive".into()));
                }
                Ok(Box::new(StubHashBackend::new(self.dimension, self.grid, self.seed)))
            }
            BackendKind::VggfacePretrained => {
                let Some(path) = &self.weights_path else {
                    return Err(EmbedError::MissingWeights {
                        backend: "vggface-pretrained".into(),
                    });
                };
                #[cfg(feature = "onnx")]
                {
                    Ok(Box::new(OnnxBackend::load(path, self, input_size)?))
                }
                #[cfg(not(feature = "onnx"))]
                {
                    let _ = (path, input_size);
                    Err(EmbedError::UnknownBackend(
                        "vggface-pretrained (built without the onnx feature)".into(),
                    ))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    #[test]
    fn cosine_difference_examples() {
        let v = [1.0f32, 2.0, 2.0];
        assert!(cosine_difference(&v, &v).unwrap().abs() < 1e-12);
        assert!((cosine_difference(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        let d = cosine_difference(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((d - (1.0 - 8.0 / 9.0)).abs() < 1e-12, "{d}");
        assert!((cosine_difference(&[1.0, 1.0], &[-1.0, -1.0]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_difference_errors() {
        assert!(matches!(
            cosine_difference(&[0.0, 0.0], &[1.0, 0.0]),
            Err(EmbedError::ZeroVector)
        ));
        assert!(matches!(
            cosine_difference(&[1.0], &[1.0, 0.0]),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn identical_frames_give_identical_rows() {
        let frame = RgbImage::from_fn(32, 32, |x, y| Rgb([x as u8 * 8, y as u8 * 8, 100]));
        let seq = FrameSequence::new(vec![frame; 20]);
        let backend = StubHashBackend::new(VGGFACE_DIMENSION, 8, 0);
        let out = embed_sequence(&seq, &backend).unwrap();
        assert_eq!(out.matrix.dim(), (20, VGGFACE_DIMENSION));
        for t in 1..20 {
            assert_eq!(out.row(t), out.row(0));
        }
    }

    #[test]
    fn wrong_backend_output_is_a_dimension_mismatch() {
        struct Liar;
        impl EmbeddingBackend for Liar {
            fn id(&self) -> &str {
                "liar"
            }
            fn dimension(&self) -> usize {
                4
            }
            fn embed(&self, _: &RgbImage) -> Result<Vec<f32>, EmbedError> {
                Ok(vec![1.0; 3])
            }
        }
        let seq = FrameSequence::new(vec![RgbImage::new(8, 8)]);
        assert!(matches!(
            embed_sequence(&seq, &Liar),
            Err(EmbedError::DimensionMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn feature_vector_rejects_nan() {
        assert!(FeatureVector::new(vec![1.0, f32::NAN]).is_err());
        assert_eq!(FeatureVector::new(vec![1.0, 2.0]).unwrap().len(), 2);
    }

    #[test]
    fn pretrained_backend_requires_weights() {
        let config = EmbedderConfig {
            backend: BackendKind::VggfacePretrained,
            ..Default::default()
        };
        assert!(matches!(config.build(224), Err(EmbedError::MissingWeights { .. })));
    }

    proptest! {
        #[test]
        fn cosine_difference_symmetric_and_scale_free(
            v in proptest::collection::vec(-10.0f32..10.0, 1..16),
            w_seed in proptest::collection::vec(-10.0f32..10.0, 16),
            c in 0.01f32..100.0,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let w: Vec<f32> = w_seed[..v.len()].to_vec();
            prop_assume!(w.iter().any(|x| x.abs() > 1e-3));
            let a = cosine_difference(&v, &w).unwrap();
            let b = cosine_difference(&w, &v).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&a));
            let scaled: Vec<f32> = v.iter().map(|x| x * c).collect();
            prop_assert!(cosine_difference(&v, &scaled).unwrap() < 1e-6);
        }
    }
}
