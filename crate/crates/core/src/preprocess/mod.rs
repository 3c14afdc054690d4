//! Raw utterance → fixed-length sequence of square face crops.
//!
//! The pipeline per utterance is: load frames (stills or a decoded clip), crop
//! the primary face in each frame (frames without a face are dropped), then
//! [`normalize_sequence`] to exactly `T` frames of `S×S`, padding with white
//! frames at the end or uniformly subsampling long sequences.

mod cache;
mod haar;
mod video;

use std::path::{Path, PathBuf};

use image::{imageops, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{FrameSource, UtteranceKey};

pub use cache::FrameCache;
pub use haar::{HaarCascade, HaarDetector, HaarParams, FRONTALFACE_DEFAULT};
pub use video::{decode_video, sample_count};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid preprocessing parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot decode video {path}: {reason}")]
    UndecodableVideo { path: PathBuf, reason: String },
    #[error("video {0} produced no frames")]
    ZeroFrames(PathBuf),
    #[error("no face detected in any of {frames} frames")]
    NoFaceInAnyFrame { frames: usize },
    #[error("frame sequence is empty")]
    EmptySequence,
    #[error("cannot read image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("invalid cascade file: {0}")]
    Cascade(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PreprocessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PreprocessError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Ordered frames of one utterance. Once normalised the last `pad_count`
/// frames are white padding.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<RgbImage>,
    pub source: Option<UtteranceKey>,
    pub pad_count: usize,
}

impl FrameSequence {
    pub fn new(frames: Vec<RgbImage>) -> Self {
        Self {
            frames,
            source: None,
            pad_count: 0,
        }
    }

    pub fn with_source(mut self, key: UtteranceKey) -> Self {
        self.source = Some(key);
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames that carry content (not padding).
    pub fn content_len(&self) -> usize {
        self.frames.len().saturating_sub(self.pad_count)
    }
}

/// Axis-aligned face box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    /// Number of raw detections merged into this box.
    pub neighbors: usize,
}

impl FaceBox {
    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn iou(&self, other: &FaceBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.width).min(other.x + other.width);
        let y1 = (self.y + self.height).min(other.y + other.height);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = (x1 - x0) as f64 * (y1 - y0) as f64;
        inter / (self.area() as f64 + other.area() as f64 - inter)
    }
}

/// Picks the face to keep when several are found: largest area, then leftmost,
/// then topmost.
pub fn primary_face(boxes: impl IntoIterator<Item = FaceBox>) -> Option<FaceBox> {
    boxes.into_iter().min_by(|a, b| {
        b.area()
            .cmp(&a.area())
            .then(a.x.cmp(&b.x))
            .then(a.y.cmp(&b.y))
    })
}

pub trait FaceDetector: Send + Sync {
    /// Every face found, in no particular order.
    fn detect_all(&self, image: &RgbImage) -> Vec<FaceBox>;

    /// The primary face, if any.
    fn detect_face(&self, image: &RgbImage) -> Option<FaceBox> {
        primary_face(self.detect_all(image))
    }
}

/// Treats the whole frame as the face. For inputs that are already cropped.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullFrameDetector;

impl FaceDetector for FullFrameDetector {
    fn detect_all(&self, image: &RgbImage) -> Vec<FaceBox> {
        if image.width() == 0 || image.height() == 0 {
            return Vec::new();
        }
        vec![FaceBox {
            x: 0,
            y: 0,
            width: image.width(),
            height: image.height(),
            neighbors: 1,
        }]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Haar,
    FullFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// OpenCV cascade XML; the bundled frontal-face cascade when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade_path: Option<PathBuf>,
    pub scale_factor: f64,
    pub min_neighbors: usize,
    pub min_size: u32,
    pub max_side: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let p = HaarParams::default();
        Self {
            kind: DetectorKind::Haar,
            cascade_path: None,
            scale_factor: p.scale_factor,
            min_neighbors: p.min_neighbors,
            min_size: p.min_size,
            max_side: p.max_side,
        }
    }
}

impl DetectorConfig {
    pub fn build(&self) -> Result<Box<dyn FaceDetector>, PreprocessError> {
        match self.kind {
            DetectorKind::FullFrame => Ok(Box::new(FullFrameDetector)),
            DetectorKind::Haar => {
                if self.scale_factor <= 1.0 {
                    return Err(PreprocessError::InvalidParameter(
                        "detector.scale_factor must exceed 1".into(),
                    ));
                }
                let cascade = match &self.cascade_path {
                    Some(p) => HaarCascade::load(p)?,
                    None => HaarCascade::frontal_face(),
                };
                Ok(Box::new(HaarDetector::new(
                    cascade,
                    HaarParams {
                        scale_factor: self.scale_factor,
                        min_neighbors: self.min_neighbors,
                        min_size: self.min_size,
                        max_side: self.max_side,
                    },
                )))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Timesteps per utterance.
    #[serde(rename = "T")]
    pub timesteps: usize,
    /// Edge length of the square face crops.
    #[serde(rename = "S")]
    pub size: u32,
    /// Sampling rate for video sources.
    pub fps: f64,
    pub detector: DetectorConfig,
    /// Executable used to decode non-GIF video.
    pub ffmpeg: String,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            timesteps: 20,
            size: 224,
            fps: 10.0,
            detector: DetectorConfig::default(),
            ffmpeg: "ffmpeg".into(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.timesteps == 0 || self.size == 0 {
            return Err(PreprocessError::InvalidParameter(
                "preprocess.T and preprocess.S must be positive".into(),
            ));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(PreprocessError::InvalidParameter(
                "preprocess.fps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Short hex digest of every setting that affects the output frames.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("config serializes"));
        hex::encode(&hasher.finalize()[..8])
    }
}

pub fn white_frame(size: u32) -> RgbImage {
    RgbImage::from_pixel(size, size, Rgb([u8::MAX; 3]))
}

fn resize_square(image: &RgbImage, size: u32) -> RgbImage {
    if image.width() == size && image.height() == size {
        return image.clone();
    }
    imageops::resize(image, size, size, imageops::FilterType::Triangle)
}

/// Brings a sequence of face crops to exactly `t` frames of `s×s`.
///
/// Content frames (everything but the trailing `pad_count`) are resized; more
/// than `t` of them are subsampled at indices `⌊i·n/t⌋`, fewer are followed by
/// white frames. Idempotent for a fixed `(t, s)`.
pub fn normalize_sequence(
    seq: FrameSequence,
    t: usize,
    s: u32,
) -> Result<FrameSequence, PreprocessError> {
    if t == 0 || s == 0 {
        return Err(PreprocessError::InvalidParameter(
            "T and S must be positive".into(),
        ));
    }
    let content = seq.content_len();
    if content == 0 {
        return Err(PreprocessError::EmptySequence);
    }
    let mut frames = seq.frames;
    frames.truncate(content);
    let n = frames.len();
    let kept: Vec<RgbImage> = if n > t {
        (0..t).map(|i| resize_square(&frames[i * n / t], s)).collect()
    } else {
        frames.iter().map(|f| resize_square(f, s)).collect()
    };
    let pad_count = t - kept.len();
    let mut out = kept;
    out.extend(std::iter::repeat_with(|| white_frame(s)).take(pad_count));
    Ok(FrameSequence {
        frames: out,
        source: seq.source,
        pad_count,
    })
}

pub(crate) fn read_rgb(path: &Path) -> Result<RgbImage, PreprocessError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| PreprocessError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads, crops and normalises utterances with one face detector.
pub struct Preprocessor {
    config: PreprocessConfig,
    detector: Box<dyn FaceDetector>,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Result<Self, PreprocessError> {
        config.validate()?;
        let detector = config.detector.build()?;
        Ok(Self { config, detector })
    }

    pub fn with_detector(
        config: PreprocessConfig,
        detector: Box<dyn FaceDetector>,
    ) -> Result<Self, PreprocessError> {
        config.validate()?;
        Ok(Self { config, detector })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.config
    }

    pub fn detector(&self) -> &dyn FaceDetector {
        self.detector.as_ref()
    }

    pub fn load_raw(&self, source: &FrameSource) -> Result<FrameSequence, PreprocessError> {
        match source {
            FrameSource::Images(paths) => {
                let frames = paths.iter().map(|p| read_rgb(p)).collect::<Result<Vec<_>, _>>()?;
                Ok(FrameSequence::new(frames))
            }
            FrameSource::Video(path) => decode_video(path, self.config.fps, &self.config.ffmpeg),
        }
    }

    /// Replaces each frame by its primary face crop; frames without a face are
    /// dropped.
    pub fn crop_faces(&self, raw: FrameSequence) -> Result<FrameSequence, PreprocessError> {
        let total = raw.frames.len();
        let size = self.config.size;
        let crops: Vec<RgbImage> = raw
            .frames
            .iter()
            .filter_map(|frame| {
                self.detector.detect_face(frame).map(|b| {
                    let crop = imageops::crop_imm(frame, b.x, b.y, b.width, b.height).to_image();
                    resize_square(&crop, size)
                })
            })
            .collect();
        if crops.is_empty() {
            return Err(PreprocessError::NoFaceInAnyFrame { frames: total });
        }
        Ok(FrameSequence {
            frames: crops,
            source: raw.source,
            pad_count: 0,
        })
    }

    pub fn process_frames(&self, raw: FrameSequence) -> Result<FrameSequence, PreprocessError> {
        let crops = self.crop_faces(raw)?;
        normalize_sequence(crops, self.config.timesteps, self.config.size)
    }

    pub fn process(
        &self,
        key: Option<&UtteranceKey>,
        source: &FrameSource,
    ) -> Result<FrameSequence, PreprocessError> {
        let mut raw = self.load_raw(source)?;
        raw.source = key.cloned();
        self.process_frames(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tagged(n: usize, w: u32, h: u32) -> FrameSequence {
        FrameSequence::new(
            (0..n)
                .map(|i| RgbImage::from_pixel(w, h, Rgb([i as u8, 7, 9])))
                .collect(),
        )
    }

    fn tags(seq: &FrameSequence) -> Vec<u8> {
        seq.frames[..seq.content_len()]
            .iter()
            .map(|f| f.get_pixel(0, 0)[0])
            .collect()
    }

    #[test]
    fn short_sequences_are_padded_white_at_the_end() {
        let out = normalize_sequence(tagged(13, 40, 30), 20, 16).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(out.pad_count, 7);
        assert_eq!(tags(&out), (0..13).collect::<Vec<u8>>());
        for f in &out.frames[13..] {
            assert!(f.pixels().all(|p| p.0 == [255, 255, 255]));
        }
    }

    #[test]
    fn exact_length_is_unchanged() {
        let out = normalize_sequence(tagged(20, 16, 16), 20, 16).unwrap();
        assert_eq!(out.pad_count, 0);
        assert_eq!(tags(&out), (0..20).collect::<Vec<u8>>());
    }

    #[test]
    fn long_sequences_are_subsampled_in_order() {
        let out = normalize_sequence(tagged(25, 16, 16), 20, 16).unwrap();
        let expected: Vec<u8> = (0..20).map(|i| (i * 25 / 20) as u8).collect();
        assert_eq!(tags(&out), expected);
        assert_eq!(out.pad_count, 0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            normalize_sequence(FrameSequence::new(vec![]), 20, 16),
            Err(PreprocessError::EmptySequence)
        ));
        assert!(normalize_sequence(tagged(3, 8, 8), 0, 16).is_err());
    }

    #[test]
    fn primary_face_prefers_largest_then_leftmost() {
        let b = |x, w| FaceBox { x, y: 0, width: w, height: w, neighbors: 4 };
        assert_eq!(primary_face([b(50, 10), b(0, 30), b(80, 20)]), Some(b(0, 30)));
        assert_eq!(primary_face([b(40, 30), b(10, 30)]), Some(b(10, 30)));
        assert_eq!(primary_face(Vec::new()), None);
    }

    #[test]
    fn iou_of_known_boxes() {
        let a = FaceBox { x: 0, y: 0, width: 10, height: 10, neighbors: 0 };
        let b = FaceBox { x: 5, y: 0, width: 10, height: 10, neighbors: 0 };
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn frames_without_faces_are_dropped() {
        struct EvenOnly;
        impl FaceDetector for EvenOnly {
            fn detect_all(&self, image: &RgbImage) -> Vec<FaceBox> {
                if image.get_pixel(0, 0)[0] % 2 == 0 {
                    FullFrameDetector.detect_all(image)
                } else {
                    Vec::new()
                }
            }
        }
        let config = PreprocessConfig { timesteps: 10, size: 8, ..Default::default() };
        let pre = Preprocessor::with_detector(config, Box::new(EvenOnly)).unwrap();
        let out = pre.process_frames(tagged(9, 12, 12)).unwrap();
        assert_eq!(tags(&out), [0, 2, 4, 6, 8]);
        assert_eq!(out.pad_count, 5);

        let odd = FrameSequence::new(vec![RgbImage::from_pixel(4, 4, Rgb([1, 0, 0]))]);
        assert!(matches!(
            pre.process_frames(odd),
            Err(PreprocessError::NoFaceInAnyFrame { frames: 1 })
        ));
    }

    #[test]
    fn digest_tracks_config() {
        let a = PreprocessConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.size = 112;
        assert_ne!(a.digest(), b.digest());
    }

    proptest! {
        #[test]
        fn shape_order_and_idempotence(n in 1usize..40, t in 1usize..30, s in 1u32..12) {
            let once = normalize_sequence(tagged(n, 5, 7), t, s).unwrap();
            prop_assert_eq!(once.len(), t);
            prop_assert!(once.frames.iter().all(|f| f.dimensions() == (s, s)));
            prop_assert_eq!(once.pad_count, t.saturating_sub(n));
            let order = tags(&once);
            prop_assert!(order.windows(2).all(|w| w[0] < w[1]));
            for f in &once.frames[once.content_len()..] {
                prop_assert!(f.pixels().all(|p| p.0 == [u8::MAX; 3]));
            }
            let twice = normalize_sequence(once.clone(), t, s).unwrap();
            prop_assert_eq!(twice, once);
        }
    }
}
