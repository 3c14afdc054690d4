use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::process::Command;

use image::codecs::gif::GifDecoder;
use image::{AnimationDecoder, RgbImage};

use super::{FrameSequence, PreprocessError};

/// Number of frames a clip of `duration_s` seconds yields when sampled at `fps`.
pub fn sample_count(duration_s: f64, fps: f64) -> usize {
    (duration_s * fps + 1e-9).floor().max(0.0) as usize
}

/// Decodes a clip into frames sampled uniformly at `fps`, starting at t = 0.
///
/// Animated GIFs are decoded in-process. Every other container goes through
/// the `ffmpeg` executable named by `ffmpeg` (its `fps` filter performs the
/// resampling).
pub fn decode_video(path: &Path, fps: f64, ffmpeg: &str) -> Result<FrameSequence, PreprocessError> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(PreprocessError::InvalidParameter(format!(
            "fps must be positive, got {fps}"
        )));
    }
    let is_gif = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("gif"));
    let frames = if is_gif {
        decode_gif(path, fps)?
    } else {
        decode_ffmpeg(path, fps, ffmpeg)?
    };
    if frames.is_empty() {
        return Err(PreprocessError::ZeroFrames(path.to_path_buf()));
    }
    Ok(FrameSequence::new(frames))
}

fn decode_gif(path: &Path, fps: f64) -> Result<Vec<RgbImage>, PreprocessError> {
    let undecodable = |reason: String| PreprocessError::UndecodableVideo {
        path: path.to_path_buf(),
        reason,
    };
    let file = fs::File::open(path).map_err(|e| PreprocessError::io(path, e))?;
    let decoder = GifDecoder::new(BufReader::new(file)).map_err(|e| undecodable(e.to_string()))?;
    let mut clip = Vec::new();
    let mut starts = Vec::new();
    let mut t = 0.0f64;
    for frame in decoder.into_frames() {
        let frame = frame.map_err(|e| undecodable(e.to_string()))?;
        let (num, den) = frame.delay().numer_denom_ms();
        let delay_s = num as f64 / den.max(1) as f64 / 1000.0;
        starts.push(t);
        t += delay_s;
        clip.push(image::DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8());
    }
    if clip.is_empty() {
        return Ok(Vec::new());
    }
    let duration = t;
    Ok((0..sample_count(duration, fps))
        .map(|k| {
            let at = k as f64 / fps;
            let idx = starts.partition_point(|&s| s <= at + 1e-9).saturating_sub(1);
            clip[idx].clone()
        })
        .collect())
}

fn decode_ffmpeg(path: &Path, fps: f64, ffmpeg: &str) -> Result<Vec<RgbImage>, PreprocessError> {
    let undecodable = |reason: String| PreprocessError::UndecodableVideo {
        path: path.to_path_buf(),
        reason,
    };
    if !path.is_file() {
        return Err(undecodable("file not found".into()));
    }
    let out_dir = tempfile::tempdir().map_err(|e| PreprocessError::io(path, e))?;
    let status = Command::new(ffmpeg)
        .arg("-v")
        .arg("error")
        .arg("-i")
        .arg(path)
        .arg("-vf")
        .arg(format!("fps={fps}"))
        .arg("-start_number")
        .arg("0")
        .arg(out_dir.path().join("%06d.png"))
        .status()
        .map_err(|e| undecodable(format!("could not run {ffmpeg}: {e}")))?;
    if !status.success() {
        return Err(undecodable(format!("{ffmpeg} exited with {status}")));
    }
    let mut files: Vec<_> = fs::read_dir(out_dir.path())
        .map_err(|e| PreprocessError::io(out_dir.path(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    files.sort();
    files
        .iter()
        .map(|f| super::read_rgb(f))
        .collect()
}
