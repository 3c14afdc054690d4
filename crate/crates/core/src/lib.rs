//! Person-word video verification: a face-embedding sequence per utterance is
//! scored by a stacked LSTM trained for one enrolled speaker and word.
//!
//! The stages are separate modules: [`corpus`] indexes utterances and builds
//! train/test plans, [`preprocess`] turns raw frames into fixed-length face
//! crops, [`embedder`] maps crops to feature vectors, [`classifier`] trains and
//! scores the verifier, [`metrics`] evaluates it and [`harness`] runs the whole
//! experiment.

pub mod classifier;
pub mod corpus;
pub mod embedder;
pub mod harness;
pub mod metrics;
pub mod preprocess;

pub use classifier::{Prediction, TrainedVerifier, VerifierConfig};
pub use corpus::{CorpusIndex, FrameSource, ImposterKind, SplitConfig, SplitPlan, Target, UtteranceKey};
pub use embedder::{EmbedderConfig, FeatureSequence};
pub use harness::{ExperimentConfig, HarnessError, RunManifest, Verdict};
pub use metrics::{ConfusionMatrix, EvalReport, ScoredSample};
pub use preprocess::{FrameSequence, PreprocessConfig};
