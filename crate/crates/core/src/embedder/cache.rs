use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::Array2;

use super::{EmbedError, FeatureSequence};
use crate::corpus::UtteranceKey;

const EXT: &str = "f32";
const PAD_EXT: &str = "pad";

/// Encodes `matrix` as `u32 T, u32 D` (little-endian) followed by the
/// row-major `f32` values, little-endian.
pub fn encode_features(matrix: &Array2<f32>) -> Vec<u8> {
    let (t, d) = matrix.dim();
    let mut buf = Vec::with_capacity(8 + 4 * t * d);
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for v in matrix.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Array2<f32>, EmbedError> {
    let corrupt = |reason: String| EmbedError::CorruptCache {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 {
        return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let t = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| corrupt("header overflows".into()))?;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "{t}×{d} header needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((t, d), values).expect("length checked"))
}

pub fn write_feature_file(path: &Path, matrix: &Array2<f32>) -> Result<(), EmbedError> {
    atomic_write(path, &encode_features(matrix))
}

pub fn read_feature_file(path: &Path) -> Result<Array2<f32>, EmbedError> {
    let bytes = fs::read(path).map_err(|e| EmbedError::io(path, e))?;
    decode_features(&bytes, path)
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), EmbedError> {
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| EmbedError::io(parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| EmbedError::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| EmbedError::io(path, e))?;
    tmp.persist(path).map_err(|e| EmbedError::io(path, e.error))?;
    Ok(())
}

/// Per-utterance feature files under
/// `<cache>/features/<backend fingerprint>/<preprocess digest>/<speaker>/<word>/<utt>.f32`.
///
/// The number of padding rows is kept in a `.pad` sidecar next to each file.
/// Writers of the same key are serialised; readers never block.
#[derive(Debug)]
pub struct FeatureCache {
    dir: PathBuf,
    backend_id: String,
    locks: Mutex<HashMap<UtteranceKey, Arc<Mutex<()>>>>,
}

impl FeatureCache {
    pub fn new(cache_root: &Path, backend_id: &str, fingerprint: &str, digest: &str) -> Self {
        Self {
            dir: cache_root.join("features").join(fingerprint).join(digest),
            backend_id: backend_id.to_string(),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, key: &UtteranceKey) -> PathBuf {
        self.dir.join(key.rel_path()).with_extension(EXT)
    }

    pub fn load(&self, key: &UtteranceKey) -> Result<Option<FeatureSequence>, EmbedError> {
        let path = self.path_of(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(EmbedError::io(&path, e)),
        };
        let matrix = decode_features(&bytes, &path)?;
        let pad_path = path.with_extension(PAD_EXT);
        let pad_count = match fs::read_to_string(&pad_path) {
            Ok(s) => s.trim().parse().map_err(|_| EmbedError::CorruptCache {
                path: pad_path.clone(),
                reason: format!("bad pad count {s:?}"),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(EmbedError::io(&pad_path, e)),
        };
        Ok(Some(FeatureSequence {
            matrix,
            source: Some(key.clone()),
            backend_id: self.backend_id.clone(),
            pad_count,
        }))
    }

    pub fn store(&self, key: &UtteranceKey, seq: &FeatureSequence) -> Result<(), EmbedError> {
        let lock = self.lock_for(key);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.path_of(key);
        atomic_write(&path.with_extension(PAD_EXT), seq.pad_count.to_string().as_bytes())?;
        write_feature_file(&path, &seq.matrix)
    }

    /// Cached features for `key`, computing and storing them on a miss.
    pub fn get_or_insert_with(
        &self,
        key: &UtteranceKey,
        compute: impl FnOnce() -> Result<FeatureSequence, EmbedError>,
    ) -> Result<FeatureSequence, EmbedError> {
        if let Some(hit) = self.load(key)? {
            return Ok(hit);
        }
        let seq = compute()?;
        self.store(key, &seq)?;
        Ok(seq)
    }

    fn lock_for(&self, key: &UtteranceKey) -> Arc<Mutex<()>> {
        let mut map = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        map.entry(key.clone()).or_default().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(key: &UtteranceKey) -> FeatureSequence {
        FeatureSequence {
            matrix: Array2::from_shape_fn((3, 5), |(t, d)| t as f32 * 0.5 - d as f32 / 3.0),
            source: Some(key.clone()),
            backend_id: "stub-hash".into(),
            pad_count: 1,
        }
    }

    #[test]
    fn header_layout() {
        let m = Array2::from_shape_vec((1, 2), vec![1.0f32, -2.0]).unwrap();
        let bytes = encode_features(&m);
        assert_eq!(&bytes[..8], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 16);
    }

    #[test]
    fn hit_equals_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path(), "stub-hash", "stub-hash-x", "abc");
        let key = UtteranceKey::new("S1", "W1", 4);
        let miss = cache.get_or_insert_with(&key, || Ok(sample(&key))).unwrap();
        let hit = cache
            .get_or_insert_with(&key, || panic!("should be cached"))
            .unwrap();
        assert_eq!(miss, hit);
        assert_eq!(encode_features(&miss.matrix), fs::read(cache.path_of(&key)).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.f32");
        let mut bytes = encode_features(&sample(&UtteranceKey::new("a", "b", 0)).matrix);
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_feature_file(&path), Err(EmbedError::CorruptCache { .. })));
    }
}
