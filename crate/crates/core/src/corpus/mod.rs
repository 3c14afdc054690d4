//! Dataset indexing and the per-target split protocol.
//!
//! A corpus is a set of utterances addressed by `(speaker, word, utterance)`.
//! [`scan_corpus`] walks one of the supported on-disk layouts and produces a
//! [`CorpusIndex`]; [`make_split`] turns an index into the train/test plan for a
//! single enrolled person-word combination.

mod layout;
mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layout::{scan_corpus, Layout};
pub use split::{
    classify_imposter, enumerate_targets, make_split, CategoryCounts, ImposterKind,
    PartitionSizes, PlanEntry, SampleRole, SplitConfig, SplitPlan,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("malformed corpus layout at {path}: {reason}")]
    MalformedLayout { path: PathBuf, reason: String },
    #[error("corpus at {0} contains no utterances")]
    EmptyCorpus(PathBuf),
    #[error("target {0} falls in a held-out partition")]
    TargetHeldOut(Target),
    #[error("target {0} is not present in the corpus")]
    UnknownTarget(Target),
    #[error("target {target} has {found} genuine utterances, {required} required")]
    InsufficientPositives {
        target: Target,
        found: usize,
        required: usize,
    },
    #[error("invalid split configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed split plan (line {line}): {reason}")]
    MalformedPlan { line: usize, reason: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }
}

/// One recorded utterance. Ordering is lexicographic on speaker, then word,
/// then numeric on the utterance index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UtteranceKey {
    pub speaker: String,
    pub word: String,
    /// 0-based.
    pub utterance: u32,
}

impl UtteranceKey {
    pub fn new(speaker: impl Into<String>, word: impl Into<String>, utterance: u32) -> Self {
        Self {
            speaker: speaker.into(),
            word: word.into(),
            utterance,
        }
    }

    pub fn combination(&self) -> Target {
        Target::new(self.speaker.clone(), self.word.clone())
    }

    /// Relative path used by every on-disk cache that mirrors the corpus.
    pub fn rel_path(&self) -> PathBuf {
        Path::new(&self.speaker)
            .join(&self.word)
            .join(format!("{:03}", self.utterance))
    }
}

impl fmt::Display for UtteranceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.speaker, self.word, self.utterance)
    }
}

/// A person-word combination: the enrolled identity of one verifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Target {
    pub speaker: String,
    pub word: String,
}

impl Target {
    pub fn new(speaker: impl Into<String>, word: impl Into<String>) -> Self {
        Self {
            speaker: speaker.into(),
            word: word.into(),
        }
    }

    /// File-name friendly identifier, `<speaker>_<word>`.
    pub fn slug(&self) -> String {
        format!("{}_{}", self.speaker, self.word)
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.speaker, self.word)
    }
}

impl std::str::FromStr for Target {
    type Err = String;

    /// Accepts `speaker/word` or `speaker,word`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (speaker, word) = s
            .split_once('/')
            .or_else(|| s.split_once(','))
            .ok_or_else(|| format!("expected <speaker>/<word>, got {s:?}"))?;
        if speaker.is_empty() || word.is_empty() {
            return Err(format!("expected <speaker>/<word>, got {s:?}"));
        }
        Ok(Target::new(speaker, word))
    }
}

/// Where the raw frames of an utterance live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameSource {
    /// Ordered still images (one per frame).
    Images(Vec<PathBuf>),
    /// A single video clip, decoded at a constant frame rate.
    Video(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub root: PathBuf,
    pub layout: Layout,
    pub speakers: Vec<String>,
    pub words: Vec<String>,
    pub utterances_per_word: u32,
    pub entries: BTreeMap<UtteranceKey, FrameSource>,
    /// Keys of the full speakers × words × utterances grid with no data on disk.
    pub missing: Vec<UtteranceKey>,
}

impl CorpusIndex {
    /// Builds an index from an explicit entry map, deriving speakers, words,
    /// the utterance count and the missing keys the same way a scan does.
    pub fn from_entries(
        root: impl Into<PathBuf>,
        layout: Layout,
        entries: BTreeMap<UtteranceKey, FrameSource>,
    ) -> Result<Self, CorpusError> {
        let root = root.into();
        if entries.is_empty() {
            return Err(CorpusError::EmptyCorpus(root));
        }
        let mut speakers: Vec<String> = entries.keys().map(|k| k.speaker.clone()).collect();
        speakers.dedup();
        let mut words: Vec<String> = entries.keys().map(|k| k.word.clone()).collect();
        words.sort();
        words.dedup();
        let utterances_per_word = entries.keys().map(|k| k.utterance + 1).max().unwrap_or(0);

        let mut missing = Vec::new();
        for s in &speakers {
            for w in &words {
                for u in 0..utterances_per_word {
                    let key = UtteranceKey::new(s.clone(), w.clone(), u);
                    if !entries.contains_key(&key) {
                        missing.push(key);
                    }
                }
            }
        }

        Ok(Self {
            root,
            layout,
            speakers,
            words,
            utterances_per_word,
            entries,
            missing,
        })
    }

    /// In-memory grid index with `speakers × words × utterances` entries and no
    /// frame data, named `S00.., W00..`. Useful for split arithmetic.
    pub fn synthetic(speakers: usize, words: usize, utterances: u32) -> Self {
        let mut entries = BTreeMap::new();
        for s in 0..speakers {
            for w in 0..words {
                for u in 0..utterances {
                    entries.insert(
                        UtteranceKey::new(format!("S{s:02}"), format!("W{w:02}"), u),
                        FrameSource::Images(Vec::new()),
                    );
                }
            }
        }
        Self::from_entries("<synthetic>", Layout::MiraclVc1, entries)
            .expect("synthetic corpus is non-empty")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &UtteranceKey> {
        self.entries.keys()
    }

    pub fn source(&self, key: &UtteranceKey) -> Option<&FrameSource> {
        self.entries.get(key)
    }

    pub fn utterances_of<'a>(
        &'a self,
        target: &'a Target,
    ) -> impl Iterator<Item = &'a UtteranceKey> + 'a {
        self.entries
            .keys()
            .filter(move |k| k.speaker == target.speaker && k.word == target.word)
    }
}
