//! Recurrent binary verifier for one person-word combination.

mod adam;
mod io;
mod network;

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SplitPlan, Target, UtteranceKey};
use crate::embedder::FeatureSequence;

use adam::Adam;
use network::Network;

pub use io::{load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logs.
pub const PROB_EPSILON: f64 = 1e-7;

const SCORE_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid verifier config: {0}")]
    InvalidConfig(String),
    #[error("training set has only {0} samples; both classes are required")]
    SingleClassTrainingSet(&'static str),
    #[error("feature shape {found:?} does not match the configured {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("training loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("no features for {0}")]
    MissingFeatures(UtteranceKey),
    #[error("corrupt model file {path}: {reason}")]
    CorruptModelFile { path: PathBuf, reason: String },
    #[error("model does not fit this pipeline: {0}")]
    ConfigMismatch(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierConfig {
    pub layers: usize,
    pub hidden_size: Vec<usize>,
    #[serde(rename = "T")]
    pub timesteps: usize,
    #[serde(rename = "D")]
    pub dimension: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub threshold: f64,
    pub seed: u64,
    /// Read the top-layer output at the last real frame instead of the last
    /// (possibly padded) step.
    pub mask_padding: bool,
    /// Per-feature standardisation with train-set mean and deviation.
    pub standardize: bool,
    /// Standard deviation of Gaussian noise added to oversampled replicas each
    /// time they are drawn; 0 keeps exact copies.
    pub replica_jitter: f64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            hidden_size: vec![256, 128, 64, 32],
            timesteps: 20,
            dimension: crate::embedder::VGGFACE_DIMENSION,
            learning_rate: 0.001,
            epochs: 60,
            batch_size: 75,
            threshold: 0.5,
            seed: 0,
            mask_padding: false,
            standardize: false,
            replica_jitter: 0.0,
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::InvalidConfig(m));
        if self.layers == 0 {
            return bad("classifier.layers must be at least 1".into());
        }
        if self.hidden_size.len() != self.layers {
            return bad(format!(
                "classifier.hidden_size lists {} sizes for {} layers",
                self.hidden_size.len(),
                self.layers
            ));
        }
        if self.hidden_size.contains(&0) {
            return bad("classifier.hidden_size entries must be positive".into());
        }
        if self.timesteps == 0 || self.dimension == 0 {
            return bad("classifier.T and classifier.D must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("classifier.learning_rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("classifier.epochs and classifier.batch_size must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("classifier.threshold {} must lie in (0, 1)", self.threshold));
        }
        if !(self.replica_jitter >= 0.0 && self.replica_jitter.is_finite()) {
            return bad("classifier.replica_jitter must be non-negative".into());
        }
        Ok(())
    }
}

/// `−(y·ln p + (1 − y)·ln(1 − p))` with `p` clamped to `[ε, 1 − ε]`.
pub fn bce_loss(p: f64, y: bool) -> f64 {
    let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean loss over the batch and its gradient with respect to each logit.
/// Clamped probabilities pass no gradient.
fn batch_loss(logits: &Array1<f64>, labels: &[bool]) -> (f64, Array1<f64>) {
    let n = labels.len() as f64;
    let mut total = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let p = sigmoid(z);
            total += bce_loss(p, y);
            if (PROB_EPSILON..=1.0 - PROB_EPSILON).contains(&p) {
                (p - if y { 1.0 } else { 0.0 }) / n
            } else {
                0.0
            }
        })
        .collect();
    (total / n, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    pub decision: bool,
    pub label: Option<bool>,
}

/// Per-feature affine map fitted on the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    fn fit<'a>(samples: impl Iterator<Item = &'a Array2<f32>>, dimension: usize) -> Self {
        let mut sum = vec![0.0f64; dimension];
        let mut sq = vec![0.0f64; dimension];
        let mut n = 0usize;
        for m in samples {
            for row in m.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += v as f64 * v as f64;
                }
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }
}

/// One training example.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub features: &'a Array2<f32>,
    pub label: bool,
    /// 0 for the original utterance, `> 0` for an oversampled copy.
    pub replica: u32,
    pub pad_count: usize,
}

impl<'a> TrainSample<'a> {
    pub fn from_sequence(seq: &'a FeatureSequence, label: bool, replica: u32) -> Self {
        Self {
            features: &seq.matrix,
            label,
            replica,
            pad_count: seq.pad_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedVerifier {
    pub target: Option<Target>,
    pub config: VerifierConfig,
    pub loss_curve: Vec<f64>,
    pub standardizer: Option<Standardizer>,
    network: Network,
}

/// Trains on the train side of `plan`, looking features up by key.
pub fn train(
    plan: &SplitPlan,
    features: &BTreeMap<UtteranceKey, FeatureSequence>,
    config: &VerifierConfig,
) -> Result<TrainedVerifier, ClassifierError> {
    let samples = plan
        .train
        .iter()
        .map(|e| {
            features
                .get(&e.key)
                .map(|seq| TrainSample::from_sequence(seq, e.label == 1, e.replica))
                .ok_or_else(|| ClassifierError::MissingFeatures(e.key.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut model = train_samples(&samples, config)?;
    model.target = Some(plan.target.clone());
    Ok(model)
}

/// Mini-batch Adam for exactly `config.epochs` epochs with seeded shuffling.
pub fn train_samples(
    samples: &[TrainSample<'_>],
    config: &VerifierConfig,
) -> Result<TrainedVerifier, ClassifierError> {
    config.validate()?;
    let expected = (config.timesteps, config.dimension);
    for s in samples {
        if s.features.dim() != expected {
            return Err(ClassifierError::ShapeMismatch {
                expected,
                found: s.features.dim(),
            });
        }
    }
    if !samples.iter().any(|s| s.label) {
        return Err(ClassifierError::SingleClassTrainingSet("negative"));
    }
    if samples.iter().all(|s| s.label) {
        return Err(ClassifierError::SingleClassTrainingSet("positive"));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(config.seed);
    jitter_rng.set_stream(2);
    let jitter = (config.replica_jitter > 0.0)
        .then(|| Normal::new(0.0, config.replica_jitter).expect("validated"));

    let mut model = TrainedVerifier {
        target: None,
        config: config.clone(),
        loss_curve: Vec::with_capacity(config.epochs),
        standardizer: config
            .standardize
            .then(|| Standardizer::fit(samples.iter().map(|s| s.features), config.dimension)),
        network: Network::init(config.dimension, &config.hidden_size, &mut init_rng),
    };
    let mut adam = Adam::new(&model.network, config.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let mut x = model.batch_input(batch.iter().map(|s| s.features));
            if let Some(dist) = &jitter {
                for (b, s) in batch.iter().enumerate() {
                    if s.replica > 0 {
                        for t in 0..config.timesteps {
                            x.row_mut(t * batch.len() + b)
                                .iter_mut()
                                .for_each(|v| *v += dist.sample(&mut jitter_rng));
                        }
                    }
                }
            }
            let last: Vec<usize> = batch.iter().map(|s| model.read_step(s.pad_count)).collect();
            let labels: Vec<bool> = batch.iter().map(|s| s.label).collect();
            let (logits, trace) = model.network.forward(x, batch.len(), &last);
            let (loss, dlogits) = batch_loss(&logits, &labels);
            if !loss.is_finite() {
                return Err(ClassifierError::DivergedLoss { epoch });
            }
            total += loss * batch.len() as f64;
            let grads = model.network.backward(&trace, &dlogits);
            adam.update(&mut model.network, &grads);
        }
        let epoch_loss = total / samples.len() as f64;
        let params_finite = model
            .network
            .tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()));
        if !epoch_loss.is_finite() || !params_finite {
            return Err(ClassifierError::DivergedLoss { epoch });
        }
        log::debug!("epoch {} loss {epoch_loss:.6}", epoch + 1);
        model.loss_curve.push(epoch_loss);
    }
    Ok(model)
}

impl TrainedVerifier {
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.network.hidden_sizes()
    }

    fn read_step(&self, pad_count: usize) -> usize {
        let t = self.config.timesteps;
        if self.config.mask_padding {
            t.saturating_sub(pad_count).max(1) - 1
        } else {
            t - 1
        }
    }

    /// Time-major `(T·B) × D` input, standardised when configured.
    fn batch_input<'a>(&self, xs: impl ExactSizeIterator<Item = &'a Array2<f32>>) -> Array2<f64> {
        let batch = xs.len();
        let (t_len, d) = (self.config.timesteps, self.config.dimension);
        let mut x = Array2::<f64>::zeros((t_len * batch, d));
        for (b, m) in xs.enumerate() {
            for t in 0..t_len {
                let mut row = x.row_mut(t * batch + b);
                for (j, (dst, &src)) in row.iter_mut().zip(m.row(t)).enumerate() {
                    *dst = match &self.standardizer {
                        Some(s) => (src as f64 - s.mean[j]) / s.std[j],
                        None => src as f64,
                    };
                }
            }
        }
        x
    }

    fn check_shape(&self, seq: &FeatureSequence) -> Result<(), ClassifierError> {
        let expected = (self.config.timesteps, self.config.dimension);
        if seq.matrix.dim() != expected {
            return Err(ClassifierError::ShapeMismatch {
                expected,
                found: seq.matrix.dim(),
            });
        }
        Ok(())
    }

    pub fn score(&self, x: &FeatureSequence) -> Result<Prediction, ClassifierError> {
        Ok(self.score_batch(&[x])?[0])
    }

    /// Scores are kept strictly inside `(0, 1)`.
    pub fn score_batch(&self, xs: &[&FeatureSequence]) -> Result<Vec<Prediction>, ClassifierError> {
        for x in xs {
            self.check_shape(x)?;
        }
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(SCORE_BATCH) {
            let input = self.batch_input(chunk.iter().map(|s| &s.matrix));
            let last: Vec<usize> = chunk.iter().map(|s| self.read_step(s.pad_count)).collect();
            let (logits, _) = self.network.forward(input, chunk.len(), &last);
            for &z in &logits {
                let score = sigmoid(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON);
                out.push(Prediction {
                    score,
                    decision: score >= self.config.threshold,
                    label: None,
                });
            }
        }
        Ok(out)
    }

    /// Mean loss over `samples` without updating weights.
    pub fn evaluate_loss(&self, samples: &[TrainSample<'_>]) -> f64 {
        let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
        let input = self.batch_input(samples.iter().map(|s| s.features));
        let last: Vec<usize> = samples.iter().map(|s| self.read_step(s.pad_count)).collect();
        let (logits, _) = self.network.forward(input, samples.len(), &last);
        batch_loss(&logits, &labels).0
    }

    /// Mean loss over `samples` and its gradient with respect to every
    /// parameter, in the order of [`TrainedVerifier::parameters`].
    pub fn loss_gradient(&self, samples: &[TrainSample<'_>]) -> (f64, Vec<Vec<f64>>) {
        let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
        let input = self.batch_input(samples.iter().map(|s| s.features));
        let last: Vec<usize> = samples.iter().map(|s| self.read_step(s.pad_count)).collect();
        let (logits, trace) = self.network.forward(input, samples.len(), &last);
        let (loss, dlogits) = batch_loss(&logits, &labels);
        let grads = self.network.backward(&trace, &dlogits);
        (loss, grads.tensors().iter().map(|t| t.to_vec()).collect())
    }

    /// Flattened weight tensors: per layer the input kernel, recurrent
    /// kernel and bias, then the output weights and bias.
    pub fn parameters(&self) -> Vec<Vec<f64>> {
        self.network.tensors().iter().map(|t| t.to_vec()).collect()
    }

    pub fn set_parameter(&mut self, tensor: usize, index: usize, value: f64) {
        self.network.tensors_mut()[tensor][index] = value;
    }
}
