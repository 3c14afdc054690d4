//! Experiment orchestration: configuration, the per-combination loop with
//! caching and resume, aggregation and reports.
//!
//! Everything a run produces lives under `config.output`:
//!
//! ```text
//! manifest.json   config.toml
//! models/<speaker>_<word>.bin
//! reports/<speaker>_<word>.json   reports/<speaker>_<word>.plan.tsv
//! reports/aggregate.json          reports/tables.md
//! plots/*.svg
//! cache/frames/…  cache/features/…
//! ```

mod config;
mod manifest;
mod plot;
mod report;
mod store;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{self, load_model, save_model, ClassifierError, TrainedVerifier};
use crate::corpus::{
    enumerate_targets, make_split, scan_corpus, CorpusError, CorpusIndex, FrameSource, SplitPlan,
    Target, UtteranceKey,
};
use crate::embedder::{EmbedError, FeatureSequence};
use crate::metrics::{EvalReport, MetricsError, ScoredSample};
use crate::preprocess::PreprocessError;

pub use config::{env_var_name, known_keys, load_config, CorpusConfig, ExperimentConfig, ENV_PREFIX};
pub use manifest::{ManifestEntry, RunManifest, Status, MANIFEST_FILE};
pub use plot::{confusion_svg, roc_svg};
pub use report::{
    aggregate, imposter_table, metric_values, performance_table, report, Aggregate,
    CombinationReport, MetricSummary, ReportOutputs,
};
pub use store::FeatureStore;
pub use synth::{base_face, synth_frame, write_synthetic_corpus, SynthGrid};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("manifest has no completed combination to report")]
    EmptyManifest,
    #[error("unreadable manifest or report {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for configuration problems, 3 for corpus problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::ConfigInvalid(_) => 1,
            HarnessError::Corpus(CorpusError::InvalidConfig(_)) => 1,
            HarnessError::Corpus(_) => 3,
            _ => 2,
        }
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

pub fn model_path(output: &Path, target: &Target) -> PathBuf {
    output.join("models").join(format!("{}.bin", target.slug()))
}

pub fn report_path(output: &Path, target: &Target) -> PathBuf {
    output.join("reports").join(format!("{}.json", target.slug()))
}

pub fn plan_path(output: &Path, target: &Target) -> PathBuf {
    output.join("reports").join(format!("{}.plan.tsv", target.slug()))
}

fn relative(output: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(output).unwrap_or(path).to_path_buf()
}

/// A scanned corpus plus the preprocessing and embedding pipeline for one
/// configuration.
pub struct Session {
    pub config: ExperimentConfig,
    pub index: CorpusIndex,
    pub store: FeatureStore,
    pool: rayon::ThreadPool,
}

impl Session {
    pub fn open(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let index = scan_corpus(&config.corpus.root, config.corpus.layout)?;
        let store = FeatureStore::new(config)?;
        Self::with_parts(config, index, store)
    }

    pub fn with_parts(
        config: &ExperimentConfig,
        index: CorpusIndex,
        store: FeatureStore,
    ) -> Result<Self, HarnessError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads())
            .build()
            .map_err(|e| HarnessError::ConfigInvalid(format!("parallelism: {e}")))?;
        Ok(Self {
            config: config.clone(),
            index,
            store,
            pool,
        })
    }

    /// Targets of the run in enumeration order, restricted to
    /// `config.targets` when it is non-empty.
    pub fn targets(&self) -> Result<Vec<Target>, HarnessError> {
        let all = enumerate_targets(&self.index, &self.config.split, self.config.seed);
        let filter = self.config.target_filter()?;
        if filter.is_empty() {
            return Ok(all);
        }
        for t in &filter {
            if !self.index.speakers.contains(&t.speaker) || !self.index.words.contains(&t.word) {
                return Err(CorpusError::UnknownTarget(t.clone()).into());
            }
            if !all.contains(t) {
                return Err(CorpusError::TargetHeldOut(t.clone()).into());
            }
        }
        Ok(all.into_iter().filter(|t| filter.contains(t)).collect())
    }

    pub fn plan(&self, target: &Target) -> Result<SplitPlan, HarnessError> {
        Ok(make_split(&self.index, target, &self.config.split, self.config.seed)?)
    }

    /// Normalised frames for every utterance, written to the frame cache.
    pub fn preprocess_all(&mut self) -> BTreeMap<UtteranceKey, String> {
        self.store.force_frame_cache();
        let keys: Vec<&UtteranceKey> = self.index.keys().collect();
        let (store, index) = (&self.store, &self.index);
        let failed: Vec<(UtteranceKey, String)> = self.pool.install(|| {
            keys.par_iter()
                .filter_map(|k| {
                    let src = index.source(k)?;
                    store.frames(k, src).err().map(|e| ((*k).clone(), e.to_string()))
                })
                .collect()
        });
        failed.into_iter().collect()
    }

    pub fn features(
        &self,
        keys: &[UtteranceKey],
    ) -> (BTreeMap<UtteranceKey, FeatureSequence>, BTreeMap<UtteranceKey, String>) {
        self.pool.install(|| self.store.features_for(&self.index, keys))
    }

    /// Plan keys with usable features; the rest are removed from the plan.
    /// Returns the number of plan entries dropped.
    fn prune(plan: &mut SplitPlan, features: &BTreeMap<UtteranceKey, FeatureSequence>) -> usize {
        let before = plan.train.len() + plan.test.len();
        plan.train.retain(|e| features.contains_key(&e.key));
        plan.test.retain(|e| features.contains_key(&e.key));
        before - plan.train.len() - plan.test.len()
    }

    /// Builds the plan, trains, and writes the model and plan files.
    pub fn train_target(
        &self,
        target: &Target,
        features: &BTreeMap<UtteranceKey, FeatureSequence>,
    ) -> Result<(SplitPlan, TrainedVerifier, usize), HarnessError> {
        let mut plan = self.plan(target)?;
        let skipped = Self::prune(&mut plan, features);
        let model = classifier::train(&plan, features, &self.config.classifier)?;
        let out = &self.config.output;
        save_model(&model, &model_path(out, target))?;
        atomic_write(&plan_path(out, target), plan.to_text().as_bytes())?;
        Ok((plan, model, skipped))
    }

    /// Scores the test side of `plan` and writes the combination report.
    pub fn evaluate_target(
        &self,
        plan: &SplitPlan,
        model: &TrainedVerifier,
        features: &BTreeMap<UtteranceKey, FeatureSequence>,
        skipped: usize,
    ) -> Result<CombinationReport, HarnessError> {
        let seqs = plan
            .test
            .iter()
            .map(|e| {
                features
                    .get(&e.key)
                    .ok_or_else(|| ClassifierError::MissingFeatures(e.key.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let predictions = model.score_batch(&seqs)?;
        let scores: Vec<ScoredSample> = plan
            .test
            .iter()
            .zip(&predictions)
            .map(|(e, p)| ScoredSample {
                key: Some(e.key.clone()),
                ..ScoredSample::new(p.score, e.imposter)
            })
            .collect();
        let eval = EvalReport::from_samples(
            Some(plan.target.clone()),
            &scores,
            self.config.classifier.threshold,
        )?;
        let report = CombinationReport {
            target: plan.target.clone(),
            config_digest: self.config.digest(),
            train_samples: plan.train.len(),
            test_samples: plan.test.len(),
            skipped_samples: skipped,
            leakage_free: plan.is_leakage_free(),
            loss_curve: model.loss_curve.clone(),
            eval,
            scores,
        };
        report.save(&report_path(&self.config.output, &plan.target))?;
        Ok(report)
    }

    /// Loads a saved model and plan for `target` and evaluates it.
    pub fn evaluate_saved(&self, target: &Target) -> Result<CombinationReport, HarnessError> {
        let out = &self.config.output;
        let model = load_model(&model_path(out, target))?;
        model.ensure_shape(self.config.preprocess.timesteps, self.config.embedder.dimension)?;
        let ppath = plan_path(out, target);
        let text = std::fs::read_to_string(&ppath).map_err(|e| HarnessError::io(&ppath, e))?;
        let mut plan = SplitPlan::from_text(&text)?;
        let keys: Vec<UtteranceKey> = plan.test.iter().map(|e| e.key.clone()).collect();
        let (features, _) = self.features(&keys);
        let skipped = Self::prune(&mut plan, &features);
        self.evaluate_target(&plan, &model, &features, skipped)
    }
}

/// What a call to [`run_experiment`] did.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Combinations trained in this call.
    pub trained: Vec<Target>,
    /// Combinations whose outputs from an earlier run were kept.
    pub reused: Vec<Target>,
}

impl RunOutcome {
    pub fn failures(&self) -> usize {
        self.manifest.failures()
    }
}

fn completed_on_disk(output: &Path, entry: &ManifestEntry) -> bool {
    entry.status == Status::Completed
        && [&entry.report_path, &entry.model_path]
            .iter()
            .all(|p| p.as_ref().is_some_and(|p| output.join(p).is_file()))
}

/// Runs every combination, skipping those already completed under the same
/// configuration digest, then writes the aggregate into the manifest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    let session = Session::open(config)?;
    run_session(&session)
}

pub fn run_session(session: &Session) -> Result<RunOutcome, HarnessError> {
    let config = &session.config;
    let out = config.output.clone();
    let digest = config.digest();
    let targets = session.targets()?;
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    atomic_write(&out.join("config.toml"), config.to_toml().as_bytes())?;

    let mpath = RunManifest::path_in(&out);
    let previous = match RunManifest::load(&mpath) {
        Ok(m) if m.config_digest == digest => Some(m),
        Ok(_) => {
            log::info!("configuration changed; previous results are not reused");
            None
        }
        Err(_) => None,
    };
    let mut manifest = RunManifest {
        config_digest: digest,
        dataset: config.corpus.name.clone(),
        entries: Vec::new(),
        failed_utterances: BTreeMap::new(),
        aggregate: BTreeMap::new(),
    };
    let mut todo = Vec::new();
    let mut reused = Vec::new();
    for t in &targets {
        match previous.as_ref().and_then(|m| m.entry(t)) {
            Some(e) if completed_on_disk(&out, e) => {
                manifest.entries.push(e.clone());
                reused.push(t.clone());
            }
            _ => {
                manifest.entries.push(ManifestEntry::pending(t.clone()));
                todo.push(t.clone());
            }
        }
    }
    manifest.save(&mpath)?;

    let mut plans = BTreeMap::new();
    for t in &todo {
        match session.plan(t) {
            Ok(p) => {
                plans.insert(t.clone(), p);
            }
            Err(e) => {
                let entry = manifest.entry_mut(t).expect("entry exists");
                entry.status = Status::Failed;
                entry.error = Some(e.to_string());
            }
        }
    }
    let mut keys: Vec<UtteranceKey> = plans
        .values()
        .flat_map(|p| p.train.iter().chain(&p.test).map(|e| e.key.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    log::info!("{} combinations to run, {} utterances to embed", plans.len(), keys.len());
    let (features, failed) = session.features(&keys);
    manifest.failed_utterances = failed.into_iter().map(|(k, e)| (k.to_string(), e)).collect();
    manifest.save(&mpath)?;

    let manifest = Mutex::new(manifest);
    let trained: Vec<Target> = session.pool.install(|| {
        plans
            .par_iter()
            .filter_map(|(target, plan)| {
                let start = Instant::now();
                let result = run_one(session, plan.clone(), &features);
                let mut m = manifest.lock().expect("manifest lock");
                let entry = m.entry_mut(target).expect("entry exists");
                entry.wall_time_s = start.elapsed().as_secs_f64();
                let ok = match result {
                    Ok(r) => {
                        entry.status = Status::Completed;
                        entry.error = None;
                        entry.leakage_free = Some(r.leakage_free);
                        entry.report_path = Some(relative(&out, &report_path(&out, target)));
                        entry.model_path = Some(relative(&out, &model_path(&out, target)));
                        log::info!("{target}: done in {:.1}s", entry.wall_time_s);
                        true
                    }
                    Err(e) => {
                        log::error!("{target}: {e}");
                        entry.status = Status::Failed;
                        entry.error = Some(e.to_string());
                        false
                    }
                };
                if let Err(e) = m.save(&mpath) {
                    log::error!("{e}");
                }
                ok.then(|| target.clone())
            })
            .collect()
    });
    let mut manifest = manifest.into_inner().expect("manifest lock");

    let reports = manifest
        .completed()
        .map(|e| CombinationReport::load(&out.join(e.report_path.as_ref().expect("completed entry has a report"))))
        .collect::<Result<Vec<_>, _>>()?;
    if !reports.is_empty() {
        manifest.aggregate = aggregate(&manifest.dataset, &reports)?.macro_mean;
    }
    manifest.save(&mpath)?;
    Ok(RunOutcome {
        manifest,
        trained,
        reused,
    })
}

fn run_one(
    session: &Session,
    plan: SplitPlan,
    features: &BTreeMap<UtteranceKey, FeatureSequence>,
) -> Result<CombinationReport, HarnessError> {
    let (plan, model, skipped) = session.train_target(&plan.target.clone(), features)?;
    session.evaluate_target(&plan, &model, features, skipped)
}

/// Outcome of scoring one utterance against a saved verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub target: Option<Target>,
    pub score: f64,
    pub threshold: f64,
    pub accepted: bool,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} score={:.6} threshold={}",
            if self.accepted { "ACCEPT" } else { "REJECT" },
            self.score,
            self.threshold
        )?;
        if let Some(t) = &self.target {
            write!(f, " target={t}")?;
        }
        Ok(())
    }
}

/// Preprocesses, embeds and scores one utterance with the model at
/// `model_file`. The model must match `config`'s T and embedding dimension.
pub fn verify(model_file: &Path, source: &FrameSource, config: &ExperimentConfig) -> Result<Verdict, HarnessError> {
    let model = load_model(model_file)?;
    model.ensure_shape(config.preprocess.timesteps, config.embedder.dimension)?;
    let store = FeatureStore::new(config)?;
    verify_with(&model, &store, source)
}

pub fn verify_with(
    model: &TrainedVerifier,
    store: &FeatureStore,
    source: &FrameSource,
) -> Result<Verdict, HarnessError> {
    let features = store.features_uncached(source)?;
    let p = model.score(&features)?;
    Ok(Verdict {
        target: model.target.clone(),
        score: p.score,
        threshold: model.config.threshold,
        accepted: p.decision,
    })
}

/// Frames of a single utterance given as a directory of images or a video.
pub fn source_from_path(path: &Path) -> Result<FrameSource, HarnessError> {
    if path.is_dir() {
        let mut frames: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| HarnessError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
            })
            .collect();
        frames.sort();
        if frames.is_empty() {
            return Err(HarnessError::ConfigInvalid(format!(
                "{} holds no jpg or png frames",
                path.display()
            )));
        }
        Ok(FrameSource::Images(frames))
    } else if path.is_file() {
        Ok(FrameSource::Video(path.to_path_buf()))
    } else {
        Err(HarnessError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ))
    }
}
