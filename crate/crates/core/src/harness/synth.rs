//! Small synthetic corpus in the MIRACL-VC1 directory layout, for smoke runs
//! and tests without the real dataset.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::HarnessError;

static FACE_PNG: &[u8] = include_bytes!("../../assets/synth_face.png");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthGrid {
    pub speakers: usize,
    pub words: usize,
    pub utterances: usize,
    pub frames: usize,
}

impl Default for SynthGrid {
    fn default() -> Self {
        Self {
            speakers: 2,
            words: 2,
            utterances: 3,
            frames: 4,
        }
    }
}

pub fn base_face() -> RgbImage {
    image::load_from_memory(FACE_PNG)
        .expect("bundled face decodes")
        .to_rgb8()
}

/// One frame: the bundled face tinted per speaker, with a mouth opening that
/// follows a word-specific rhythm and a small per-utterance phase shift.
pub fn synth_frame(base: &RgbImage, speaker: usize, word: usize, utterance: usize, frame: usize) -> RgbImage {
    let mut img = base.clone();
    let tint = [
        (speaker * 37 % 41) as i32 - 20,
        (speaker * 53 % 41) as i32 - 20,
        (speaker * 71 % 41) as i32 - 20,
    ];
    for p in img.pixels_mut() {
        for c in 0..3 {
            p.0[c] = (p.0[c] as i32 + tint[c]).clamp(0, 255) as u8;
        }
    }
    let (w, h) = img.dimensions();
    let phase = frame as f64 * (0.6 + 0.45 * word as f64) + 0.15 * utterance as f64;
    let open = 0.5 + 0.5 * phase.sin();
    let cx = w as f64 / 2.0;
    let cy = h as f64 * 0.72;
    let rx = w as f64 * (0.12 + 0.02 * (word % 3) as f64);
    let ry = 1.0 + h as f64 * 0.06 * open;
    for y in 0..h {
        for x in 0..w {
            let dx = (x as f64 - cx) / rx;
            let dy = (y as f64 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                img.put_pixel(x, y, Rgb([60, 20 + 10 * (speaker % 4) as u8, 30]));
            }
        }
    }
    img
}

pub fn speaker_name(i: usize) -> String {
    format!("F{:02}", i + 1)
}

pub fn word_name(i: usize) -> String {
    format!("{:02}", i + 1)
}

/// Writes `<root>/<speaker>/words/<word>/<utt>/color_NNN.png` for the full
/// grid. Returns `root`.
pub fn write_synthetic_corpus(root: &Path, grid: SynthGrid) -> Result<PathBuf, HarnessError> {
    let base = base_face();
    for s in 0..grid.speakers {
        for w in 0..grid.words {
            for u in 0..grid.utterances {
                let dir = root
                    .join(speaker_name(s))
                    .join("words")
                    .join(word_name(w))
                    .join(format!("{:02}", u + 1));
                std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
                for f in 0..grid.frames {
                    let path = dir.join(format!("color_{:03}.png", f + 1));
                    synth_frame(&base, s, w, u, f)
                        .save(&path)
                        .map_err(|e| HarnessError::io(&path, std::io::Error::other(e)))?;
                }
            }
        }
    }
    Ok(root.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{scan_corpus, Layout};
    use crate::preprocess::{FaceDetector, HaarDetector, HaarParams};

    #[test]
    fn scans_back_and_faces_are_found() {
        let dir = tempfile::tempdir().unwrap();
        let grid = SynthGrid { speakers: 2, words: 3, utterances: 2, frames: 2 };
        write_synthetic_corpus(dir.path(), grid).unwrap();
        let index = scan_corpus(dir.path(), Layout::MiraclVc1).unwrap();
        assert_eq!(index.len(), 12);
        assert!(index.is_complete());

        let det = HaarDetector::frontal_face(HaarParams::default());
        let base = base_face();
        for (s, w) in [(0, 0), (1, 2)] {
            assert!(det.detect_face(&synth_frame(&base, s, w, 1, 3)).is_some());
        }
        assert_ne!(synth_frame(&base, 0, 0, 0, 1), synth_frame(&base, 0, 1, 0, 1));
    }
}
