//! Verification metrics: confusion-matrix rates, ROC, AUC, EER and
//! specificity per imposter type.

mod roc;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ImposterKind, Target, UtteranceKey};

pub use roc::{auc, eer, pairwise_auc, roc, RocCurve, RocPoint};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{0} is undefined: its denominator is zero")]
    UndefinedMetric(&'static str),
    #[error("ROC needs at least one positive and one negative sample")]
    SingleClassScores,
    #[error("score {0} is not a finite number")]
    InvalidScore(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64, name: &'static str) -> Result<f64, MetricsError> {
    if den == 0 {
        Err(MetricsError::UndefinedMetric(name))
    } else {
        Ok(num as f64 / den as f64)
    }
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn from_samples(samples: &[ScoredSample], threshold: f64) -> Self {
        let mut cm = Self::default();
        for s in samples {
            cm.record(s.score >= threshold, s.label);
        }
        cm
    }

    pub fn record(&mut self, accepted: bool, genuine: bool) {
        match (accepted, genuine) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self::new(
            self.tp + other.tp,
            self.tn + other.tn,
            self.fp + other.fp,
            self.fn_ + other.fn_,
        )
    }

    /// `TP / (TP + FN)`.
    pub fn sensitivity(&self) -> Result<f64, MetricsError> {
        ratio(self.tp, self.tp + self.fn_, "sensitivity")
    }

    /// `TN / (TN + FP)`.
    pub fn specificity(&self) -> Result<f64, MetricsError> {
        ratio(self.tn, self.tn + self.fp, "specificity")
    }

    /// `(TP + TN) / (TP + TN + FP + FN)`.
    pub fn accuracy(&self) -> Result<f64, MetricsError> {
        ratio(self.tp + self.tn, self.total(), "accuracy")
    }

    /// False accepts over all samples.
    pub fn far(&self) -> Result<f64, MetricsError> {
        ratio(self.fp, self.total(), "FAR")
    }

    /// False rejects over all samples.
    pub fn frr(&self) -> Result<f64, MetricsError> {
        ratio(self.fn_, self.total(), "FRR")
    }

    /// `FP / (FP + TN)`, the usual per-class false accept rate.
    pub fn far_conventional(&self) -> Result<f64, MetricsError> {
        ratio(self.fp, self.fp + self.tn, "conventional FAR")
    }

    /// `FN / (TP + FN)`, the usual per-class false reject rate.
    pub fn frr_conventional(&self) -> Result<f64, MetricsError> {
        ratio(self.fn_, self.tp + self.fn_, "conventional FRR")
    }
}

pub fn sensitivity(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.sensitivity()
}

pub fn specificity(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.specificity()
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.accuracy()
}

pub fn far(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.far()
}

pub fn frr(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    cm.frr()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: bool,
    pub imposter: ImposterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<UtteranceKey>,
}

impl ScoredSample {
    pub fn new(score: f64, imposter: ImposterKind) -> Self {
        Self {
            score,
            label: imposter.is_genuine(),
            imposter,
            key: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub count: u64,
    pub rejected: u64,
    pub specificity: f64,
}

/// Specificity within each imposter kind present among the negatives.
pub fn stratified_specificity(
    samples: &[ScoredSample],
    threshold: f64,
) -> BTreeMap<ImposterKind, Stratum> {
    let mut counts: BTreeMap<ImposterKind, (u64, u64)> = BTreeMap::new();
    for s in samples.iter().filter(|s| !s.label) {
        let e = counts.entry(s.imposter).or_default();
        e.0 += 1;
        if s.score < threshold {
            e.1 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(k, (count, rejected))| {
            (
                k,
                Stratum {
                    count,
                    rejected,
                    specificity: rejected as f64 / count as f64,
                },
            )
        })
        .collect()
}

/// Scalar metrics; `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub far: Option<f64>,
    pub frr: Option<f64>,
    pub far_conventional: Option<f64>,
    pub frr_conventional: Option<f64>,
    pub auc: Option<f64>,
    pub eer: Option<f64>,
    pub eer_threshold: Option<f64>,
}

impl MetricSet {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        Self {
            sensitivity: cm.sensitivity().ok(),
            specificity: cm.specificity().ok(),
            accuracy: cm.accuracy().ok(),
            far: cm.far().ok(),
            frr: cm.frr().ok(),
            far_conventional: cm.far_conventional().ok(),
            frr_conventional: cm.frr_conventional().ok(),
            ..Default::default()
        }
    }
}

/// Everything measured for one verifier on its test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    pub threshold: f64,
    pub samples: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
    pub roc: Option<RocCurve>,
    pub strata: BTreeMap<ImposterKind, Stratum>,
}

impl EvalReport {
    pub fn from_samples(
        target: Option<Target>,
        samples: &[ScoredSample],
        threshold: f64,
    ) -> Result<Self, MetricsError> {
        if let Some(bad) = samples.iter().find(|s| !s.score.is_finite()) {
            return Err(MetricsError::InvalidScore(bad.score));
        }
        let confusion = ConfusionMatrix::from_samples(samples, threshold);
        let mut metrics = MetricSet::from_confusion(&confusion);
        let curve = match roc(samples) {
            Ok(c) => Some(c),
            Err(MetricsError::SingleClassScores) => None,
            Err(e) => return Err(e),
        };
        if let Some(c) = &curve {
            metrics.auc = Some(auc(c));
            let (e, t) = eer(c);
            metrics.eer = Some(e);
            metrics.eer_threshold = Some(t);
        }
        Ok(Self {
            target,
            threshold,
            samples: samples.len(),
            confusion,
            metrics,
            roc: curve,
            strata: stratified_specificity(samples, threshold),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rate_examples() {
        assert_eq!(ConfusionMatrix::new(10, 0, 0, 0).sensitivity(), Ok(1.0));
        assert!((ConfusionMatrix::new(9, 0, 0, 1).sensitivity().unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(ConfusionMatrix::new(0, 10, 0, 0).specificity(), Ok(1.0));
        assert!((ConfusionMatrix::new(0, 97, 3, 0).specificity().unwrap() - 0.97).abs() < 1e-15);
        assert_eq!(ConfusionMatrix::new(3, 5, 0, 0).accuracy(), Ok(1.0));
        assert!((ConfusionMatrix::new(4, 4, 1, 1).accuracy().unwrap() - 0.8).abs() < 1e-15);
        let cm = ConfusionMatrix::new(1, 1, 1, 1);
        assert_eq!((cm.far(), cm.frr()), (Ok(0.25), Ok(0.25)));
        assert_eq!((cm.far_conventional(), cm.frr_conventional()), (Ok(0.5), Ok(0.5)));
        assert_eq!(ConfusionMatrix::new(3, 4, 0, 2).far(), Ok(0.0));
        assert_eq!(ConfusionMatrix::new(3, 4, 2, 0).frr(), Ok(0.0));
    }

    #[test]
    fn empty_denominators_are_undefined() {
        let cm = ConfusionMatrix::default();
        assert_eq!(cm.sensitivity(), Err(MetricsError::UndefinedMetric("sensitivity")));
        assert!(cm.specificity().is_err() && cm.accuracy().is_err());
        assert!(cm.far().is_err() && cm.frr().is_err());
    }

    #[test]
    fn strata_from_hand_counts() {
        use ImposterKind::*;
        // Threshold 0.5; accepted negatives are the errors.
        let samples: Vec<ScoredSample> = [
            (0.9, Genuine),
            (0.4, Genuine),
            (0.6, SamePersonDifferentWord),
            (0.1, SamePersonDifferentWord),
            (0.2, SamePersonDifferentWord),
            (0.3, DifferentPersonSameWord),
            (0.7, DifferentPersonSameWord),
            (0.5, DifferentPersonSameWord),
            (0.0, DifferentPersonDifferentWord),
            (0.2, DifferentPersonDifferentWord),
        ]
        .into_iter()
        .map(|(s, k)| ScoredSample::new(s, k))
        .collect();
        let strata = stratified_specificity(&samples, 0.5);
        assert_eq!(strata.len(), 3);
        assert!(!strata.contains_key(&Genuine));
        assert_eq!((strata[&SamePersonDifferentWord].count, strata[&SamePersonDifferentWord].rejected), (3, 2));
        assert_eq!((strata[&DifferentPersonSameWord].count, strata[&DifferentPersonSameWord].rejected), (3, 1));
        assert_eq!(strata[&DifferentPersonDifferentWord].specificity, 1.0);
        let cm = ConfusionMatrix::from_samples(&samples, 0.5);
        assert_eq!(cm, ConfusionMatrix::new(1, 5, 3, 1));
    }

    #[test]
    fn all_negatives_rejected_gives_unit_strata() {
        let samples: Vec<ScoredSample> = ImposterKind::ALL
            .iter()
            .skip(1)
            .map(|&k| ScoredSample::new(0.1, k))
            .collect();
        assert!(stratified_specificity(&samples, 0.5).values().all(|s| s.specificity == 1.0));
    }

    #[test]
    fn report_serialises() {
        let samples = vec![
            ScoredSample::new(0.8, ImposterKind::Genuine),
            ScoredSample::new(0.3, ImposterKind::DifferentPersonSameWord),
        ];
        let r = EvalReport::from_samples(None, &samples, 0.5).unwrap();
        assert_eq!(r.metrics.auc, Some(1.0));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn confusion_identities(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            let cm = ConfusionMatrix::new(tp, tn, fp, fn_);
            prop_assume!(cm.total() > 0);
            let acc = cm.accuracy().unwrap();
            prop_assert!((acc * cm.total() as f64 - (tp + tn) as f64).abs() < 1e-9);
            prop_assert!(cm.far().unwrap() + cm.frr().unwrap() <= 1.0 + 1e-12);
            if let Ok(s) = cm.sensitivity() { prop_assert!((0.0..=1.0).contains(&s)); }
            if let Ok(s) = cm.specificity() { prop_assert!((0.0..=1.0).contains(&s)); }
        }
    }
}
