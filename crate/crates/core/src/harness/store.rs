use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{ExperimentConfig, HarnessError};
use crate::corpus::{CorpusIndex, FrameSource, UtteranceKey};
use crate::embedder::{embed_sequence, EmbeddingBackend, FeatureCache, FeatureSequence};
use crate::preprocess::{FrameCache, FrameSequence, Preprocessor};

/// Frames and features for utterances, computed once and cached on disk.
pub struct FeatureStore {
    preprocessor: Preprocessor,
    frames: FrameCache,
    backend: Box<dyn EmbeddingBackend>,
    features: FeatureCache,
    cache_frames: bool,
}

impl FeatureStore {
    pub fn new(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        let backend = config.embedder.build(config.preprocess.size)?;
        Self::with_backend(config, backend)
    }

    pub fn with_backend(
        config: &ExperimentConfig,
        backend: Box<dyn EmbeddingBackend>,
    ) -> Result<Self, HarnessError> {
        let preprocessor = Preprocessor::new(config.preprocess.clone())?;
        let root = config.cache_root();
        let digest = config.preprocess.digest();
        Ok(Self {
            frames: FrameCache::new(&root, &config.preprocess),
            features: FeatureCache::new(&root, backend.id(), backend.fingerprint(), &digest),
            preprocessor,
            backend,
            cache_frames: config.cache_frames,
        })
    }

    pub fn backend(&self) -> &dyn EmbeddingBackend {
        self.backend.as_ref()
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocessor
    }

    /// Writes normalised frames to the frame cache even when
    /// `cache_frames` is off in the configuration.
    pub fn force_frame_cache(&mut self) {
        self.cache_frames = true;
    }

    pub fn frames(&self, key: &UtteranceKey, source: &FrameSource) -> Result<FrameSequence, HarnessError> {
        if !self.cache_frames {
            return Ok(self.preprocessor.process(Some(key), source)?);
        }
        if let Some(hit) = self.frames.load(key)? {
            return Ok(hit);
        }
        let seq = self.preprocessor.process(Some(key), source)?;
        self.frames.store(key, &seq)?;
        Ok(seq)
    }

    pub fn features(&self, key: &UtteranceKey, source: &FrameSource) -> Result<FeatureSequence, HarnessError> {
        if let Some(hit) = self.features.load(key)? {
            return Ok(hit);
        }
        let frames = self.frames(key, source)?;
        let seq = embed_sequence(&frames, self.backend.as_ref())?;
        self.features.store(key, &seq)?;
        Ok(seq)
    }

    /// Features for a source outside the corpus; nothing is cached.
    pub fn features_uncached(&self, source: &FrameSource) -> Result<FeatureSequence, HarnessError> {
        let frames = self.preprocessor.process(None, source)?;
        Ok(embed_sequence(&frames, self.backend.as_ref())?)
    }

    /// Features for every key, in parallel. Keys that fail are returned
    /// separately with their error message.
    pub fn features_for(
        &self,
        index: &CorpusIndex,
        keys: &[UtteranceKey],
    ) -> (BTreeMap<UtteranceKey, FeatureSequence>, BTreeMap<UtteranceKey, String>) {
        let results: Vec<(UtteranceKey, Result<FeatureSequence, String>)> = keys
            .par_iter()
            .map(|k| {
                let r = match index.source(k) {
                    Some(src) => self.features(k, src).map_err(|e| e.to_string()),
                    None => Err("missing from the corpus".to_string()),
                };
                (k.clone(), r)
            })
            .collect();
        let mut ok = BTreeMap::new();
        let mut failed = BTreeMap::new();
        for (k, r) in results {
            match r {
                Ok(f) => {
                    ok.insert(k, f);
                }
                Err(e) => {
                    log::warn!("{k}: {e}");
                    failed.insert(k, e);
                }
            }
        }
        (ok, failed)
    }
}
