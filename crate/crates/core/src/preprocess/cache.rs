use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_rgb, FrameSequence, PreprocessConfig, PreprocessError};
use crate::corpus::UtteranceKey;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct FrameManifest {
    #[serde(rename = "T")]
    timesteps: usize,
    #[serde(rename = "S")]
    size: u32,
    pad_count: usize,
    digest: String,
}

/// Normalised frames on disk: `<cache>/frames/<digest>/<speaker>/<word>/<utt>/`
/// holding `frame_NNN.png` files and a `manifest.json`.
#[derive(Debug, Clone)]
pub struct FrameCache {
    dir: PathBuf,
    digest: String,
    timesteps: usize,
    size: u32,
}

impl FrameCache {
    pub fn new(cache_root: &Path, config: &PreprocessConfig) -> Self {
        let digest = config.digest();
        Self {
            dir: cache_root.join("frames").join(&digest),
            digest,
            timesteps: config.timesteps,
            size: config.size,
        }
    }

    fn entry_dir(&self, key: &UtteranceKey) -> PathBuf {
        self.dir.join(key.rel_path())
    }

    /// Cached frames for `key`, or `None` when absent or written under a
    /// different configuration.
    pub fn load(&self, key: &UtteranceKey) -> Result<Option<FrameSequence>, PreprocessError> {
        let dir = self.entry_dir(key);
        let manifest_path = dir.join(MANIFEST);
        let Ok(text) = fs::read_to_string(&manifest_path) else {
            return Ok(None);
        };
        let Ok(manifest) = serde_json::from_str::<FrameManifest>(&text) else {
            return Ok(None);
        };
        if manifest.digest != self.digest
            || manifest.timesteps != self.timesteps
            || manifest.size != self.size
        {
            return Ok(None);
        }
        let frames = (0..manifest.timesteps)
            .map(|i| read_rgb(&dir.join(frame_name(i))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(FrameSequence {
            frames,
            source: Some(key.clone()),
            pad_count: manifest.pad_count,
        }))
    }

    /// Writes into a sibling temporary directory and renames it into place, so
    /// readers never observe a partial entry.
    pub fn store(&self, key: &UtteranceKey, seq: &FrameSequence) -> Result<(), PreprocessError> {
        let dest = self.entry_dir(key);
        let parent = dest.parent().expect("entry has a parent");
        fs::create_dir_all(parent).map_err(|e| PreprocessError::io(parent, e))?;
        let tmp = tempfile::Builder::new()
            .prefix(".tmp-frames")
            .tempdir_in(parent)
            .map_err(|e| PreprocessError::io(parent, e))?;
        for (i, frame) in seq.frames.iter().enumerate() {
            let path = tmp.path().join(frame_name(i));
            frame.save(&path).map_err(|source| PreprocessError::Image { path, source })?;
        }
        let manifest = FrameManifest {
            timesteps: seq.frames.len(),
            size: self.size,
            pad_count: seq.pad_count,
            digest: self.digest.clone(),
        };
        let manifest_path = tmp.path().join(MANIFEST);
        fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest).expect("serializes"))
            .map_err(|e| PreprocessError::io(&manifest_path, e))?;

        if dest.exists() {
            fs::remove_dir_all(&dest).map_err(|e| PreprocessError::io(&dest, e))?;
        }
        let tmp_path = tmp.keep();
        if let Err(e) = fs::rename(&tmp_path, &dest) {
            let _ = fs::remove_dir_all(&tmp_path);
            // Another writer won the race with identical content.
            if !dest.join(MANIFEST).is_file() {
                return Err(PreprocessError::io(&dest, e));
            }
        }
        Ok(())
    }
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:03}.png")
}
