use std::path::PathBuf;

use authnet::embedder::{embed_sequence, EmbeddingBackend, StubHashBackend};
use authnet::preprocess::FrameSequence;
use image::{Rgb, RgbImage};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn pattern(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        Rgb([
            ((x * 7 + y * 3) % 256) as u8,
            ((x * x + y) % 256) as u8,
            (((x ^ y) * 5) % 256) as u8,
        ])
    })
}

fn assert_close(found: &[f32], expected: &[f64]) {
    assert_eq!(found.len(), expected.len());
    for (f, e) in found.iter().zip(expected) {
        assert!((*f as f64 - e).abs() < 1e-6, "{found:?} vs {expected:?}");
    }
}

// Expected values come from an independent NumPy evaluation of the documented
// block-mean / splitmix64 projection.
#[test]
fn stub_golden_pattern() {
    let v = StubHashBackend::new(6, 4, 42).embed(&pattern(32, 24)).unwrap();
    assert_close(
        &v,
        &[
            -0.20206761360168457,
            0.11114443838596344,
            0.038890112191438675,
            0.37267228960990906,
            -0.022628404200077057,
            -0.1843157261610031,
        ],
    );
}

#[test]
fn stub_golden_face_fixture() {
    let img = image::open(fixture("faces/face_03.png")).unwrap().to_rgb8();
    let v = StubHashBackend::new(5, 8, 7).embed(&img).unwrap();
    assert_close(
        &v,
        &[
            -0.07757344096899033,
            -0.12662948668003082,
            -0.1429104208946228,
            0.22220401465892792,
            0.28667402267456055,
        ],
    );
}

#[test]
fn sequence_rows_are_per_frame_embeddings() {
    let backend = StubHashBackend::new(2622, 8, 0);
    let frames: Vec<RgbImage> = (0..20).map(|i| pattern(24 + i, 24 + i)).collect();
    let seq = embed_sequence(&FrameSequence::new(frames.clone()), &backend);
    // Frames of differing size are rejected; normalised frames share one size.
    assert!(seq.is_err());
    let frames: Vec<RgbImage> = (0..20)
        .map(|i| image::imageops::resize(&pattern(24 + i, 24 + i), 32, 32, image::imageops::Triangle))
        .collect();
    let seq = embed_sequence(&FrameSequence::new(frames.clone()), &backend).unwrap();
    assert_eq!(seq.matrix.dim(), (20, 2622));
    for (t, f) in frames.iter().enumerate() {
        assert_eq!(seq.row(t).to_vec(), backend.embed(f).unwrap());
    }
}

#[cfg(feature = "onnx")]
mod onnx {
    use super::*;
    use authnet::embedder::{BackendKind, EmbedError, EmbedderConfig};

    fn config(dimension: usize) -> EmbedderConfig {
        EmbedderConfig {
            backend: BackendKind::VggfacePretrained,
            dimension,
            weights_path: Some(fixture("onnx/tiny_embedder.onnx")),
            ..Default::default()
        }
    }

    // A small conv net exported from PyTorch; expected output computed by
    // PyTorch on the BGR, mean-subtracted NCHW tensor.
    #[test]
    fn matches_pytorch_reference() {
        let backend = config(6).build(16).unwrap();
        let v = backend.embed(&pattern(16, 16)).unwrap();
        let expected = [
            3.6086020469665527,
            2.8174712657928467,
            3.438746452331543,
            -13.483963012695312,
            -7.678478240966797,
            1.0939834117889404,
        ];
        for (f, e) in v.iter().zip(expected) {
            assert!((*f as f64 - e).abs() < 1e-4, "{v:?}");
        }
        assert_eq!(backend.id(), "vggface-pretrained");
    }

    #[test]
    fn wrong_dimension_is_reported() {
        assert!(matches!(
            config(2622).build(16),
            Err(EmbedError::DimensionMismatch { expected: 2622, found: 6 })
        ));
    }

    #[test]
    fn wrong_frame_size_is_rejected() {
        let backend = config(6).build(16).unwrap();
        assert!(backend.embed(&pattern(20, 20)).is_err());
    }
}
