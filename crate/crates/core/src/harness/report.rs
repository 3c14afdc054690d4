use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::RunManifest;
use super::plot;
use super::{atomic_write, HarnessError};
use crate::corpus::{ImposterKind, Target};
use crate::metrics::{EvalReport, MetricSet, ScoredSample};

/// Everything written for one person-word combination. Contains no timing,
/// so identical runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationReport {
    pub target: Target,
    pub config_digest: String,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Plan entries dropped because their utterance failed to preprocess.
    pub skipped_samples: usize,
    pub leakage_free: bool,
    pub loss_curve: Vec<f64>,
    pub eval: EvalReport,
    pub scores: Vec<ScoredSample>,
}

impl CombinationReport {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        atomic_write(path, &serde_json::to_vec_pretty(self).expect("report serializes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Combinations where the metric is defined.
    pub n: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n: values.len(),
        })
    }
}

/// Named scalar metrics in table order.
pub fn metric_values(m: &MetricSet) -> [(&'static str, Option<f64>); 9] {
    [
        ("sensitivity", m.sensitivity),
        ("specificity", m.specificity),
        ("accuracy", m.accuracy),
        ("auc", m.auc),
        ("eer", m.eer),
        ("far", m.far),
        ("frr", m.frr),
        ("far_conventional", m.far_conventional),
        ("frr_conventional", m.frr_conventional),
    ]
}

/// Across-combination summary: the macro view averages per-combination
/// metrics, the pooled view evaluates all test scores together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub combinations: usize,
    pub macro_mean: BTreeMap<String, MetricSummary>,
    pub macro_strata: BTreeMap<ImposterKind, MetricSummary>,
    pub pooled: EvalReport,
}

pub fn aggregate(dataset: &str, reports: &[CombinationReport]) -> Result<Aggregate, HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::EmptyManifest);
    }
    let mut macro_mean = BTreeMap::new();
    for (i, (name, _)) in metric_values(&reports[0].eval.metrics).iter().enumerate() {
        let values: Vec<f64> = reports
            .iter()
            .filter_map(|r| metric_values(&r.eval.metrics)[i].1)
            .collect();
        if let Some(s) = MetricSummary::of(&values) {
            macro_mean.insert(name.to_string(), s);
        }
    }
    let mut macro_strata = BTreeMap::new();
    for kind in ImposterKind::ALL.iter().skip(1) {
        let values: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.eval.strata.get(kind).map(|s| s.specificity))
            .collect();
        if let Some(s) = MetricSummary::of(&values) {
            macro_strata.insert(*kind, s);
        }
    }
    let threshold = reports[0].eval.threshold;
    let all: Vec<ScoredSample> = reports.iter().flat_map(|r| r.scores.iter().cloned()).collect();
    let pooled = EvalReport::from_samples(None, &all, threshold)?;
    Ok(Aggregate {
        dataset: dataset.to_string(),
        combinations: reports.len(),
        macro_mean,
        macro_strata,
        pooled,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

/// Sensitivity, specificity, accuracy, AUC and EER for the dataset, as the
/// mean over combinations and over pooled scores.
pub fn performance_table(agg: &Aggregate) -> String {
    let rows = [
        ("Sensitivity", "sensitivity", agg.pooled.metrics.sensitivity),
        ("Specificity", "specificity", agg.pooled.metrics.specificity),
        ("Accuracy", "accuracy", agg.pooled.metrics.accuracy),
        ("AUC Score", "auc", agg.pooled.metrics.auc),
        ("Equal Error Rate", "eer", agg.pooled.metrics.eer),
    ];
    let mut out = String::new();
    let _ = writeln!(
        out,
        "| Metric | {0} (mean of {1}) | {0} (pooled) |",
        agg.dataset, agg.combinations
    );
    out.push_str("|---|---|---|\n");
    for (label, key, pooled) in rows {
        let mean = agg.macro_mean.get(key).map(|s| s.mean);
        let _ = writeln!(out, "| {label} | {} | {} |", cell(mean), cell(pooled));
    }
    out
}

/// Specificity per imposter type with pooled sample counts.
pub fn imposter_table(agg: &Aggregate) -> String {
    let mut out = String::from(
        "| Imposter types/Error cases | Samples | Specificity (pooled) | Specificity (mean) |\n|---|---|---|---|\n",
    );
    for kind in ImposterKind::ALL.iter().skip(1) {
        let pooled = agg.pooled.strata.get(kind);
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            kind.title(),
            pooled.map_or(0, |s| s.count),
            cell(pooled.map(|s| s.specificity)),
            cell(agg.macro_strata.get(kind).map(|s| s.mean)),
        );
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct ReportOutputs {
    pub aggregate_json: PathBuf,
    pub tables: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Aggregates the completed combinations of a run and writes
/// `reports/aggregate.json`, `reports/tables.md` and the plots.
pub fn report(manifest: &RunManifest, output: &Path) -> Result<(Aggregate, ReportOutputs), HarnessError> {
    let mut reports = Vec::new();
    for e in manifest.completed() {
        let rel = e.report_path.as_ref().ok_or(HarnessError::EmptyManifest)?;
        reports.push(CombinationReport::load(&output.join(rel))?);
    }
    let agg = aggregate(&manifest.dataset, &reports)?;

    let reports_dir = output.join("reports");
    let plots_dir = output.join("plots");
    let mut out = ReportOutputs {
        aggregate_json: reports_dir.join("aggregate.json"),
        tables: reports_dir.join("tables.md"),
        plots: Vec::new(),
    };
    atomic_write(
        &out.aggregate_json,
        &serde_json::to_vec_pretty(&agg).expect("aggregate serializes"),
    )?;
    let tables = format!(
        "## Performance\n\n{}\n## Specificity by imposter type\n\n{}",
        performance_table(&agg),
        imposter_table(&agg)
    );
    atomic_write(&out.tables, tables.as_bytes())?;

    let mut emit = |name: String, svg: String| -> Result<(), HarnessError> {
        let path = plots_dir.join(name);
        atomic_write(&path, svg.as_bytes())?;
        out.plots.push(path);
        Ok(())
    };
    if let Some(curve) = &agg.pooled.roc {
        emit("roc_pooled.svg".into(), plot::roc_svg(curve, &format!("{} pooled ROC", agg.dataset)))?;
    }
    emit(
        "confusion_pooled.svg".into(),
        plot::confusion_svg(&agg.pooled.confusion, &format!("{} pooled", agg.dataset)),
    )?;
    for r in &reports {
        let slug = r.target.slug();
        if let Some(curve) = &r.eval.roc {
            emit(format!("roc_{slug}.svg"), plot::roc_svg(curve, &format!("ROC {}", r.target)))?;
        }
        emit(
            format!("confusion_{slug}.svg"),
            plot::confusion_svg(&r.eval.confusion, &r.target.to_string()),
        )?;
    }
    Ok((agg, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn combo(target: &str, scores: &[(f64, ImposterKind)]) -> CombinationReport {
        let samples: Vec<ScoredSample> =
            scores.iter().map(|&(s, k)| ScoredSample::new(s, k)).collect();
        let t: Target = target.parse().unwrap();
        CombinationReport {
            eval: EvalReport::from_samples(Some(t.clone()), &samples, 0.5).unwrap(),
            target: t,
            config_digest: "d".into(),
            train_samples: 0,
            test_samples: samples.len(),
            skipped_samples: 0,
            leakage_free: true,
            loss_curve: vec![],
            scores: samples,
        }
    }

    use ImposterKind::*;

    #[test]
    fn single_combination_aggregate_is_itself() {
        let r = combo("A/x", &[(0.9, Genuine), (0.2, SamePersonDifferentWord), (0.6, DifferentPersonSameWord)]);
        let agg = aggregate("set", std::slice::from_ref(&r)).unwrap();
        for (name, v) in metric_values(&r.eval.metrics) {
            if let Some(v) = v {
                assert_eq!(agg.macro_mean[name].mean, v, "{name}");
            }
        }
        assert_eq!(agg.pooled.metrics, r.eval.metrics);
    }

    #[test]
    fn two_combination_mean_by_hand() {
        // A: TP 1, FN 1, TN 2, FP 0 -> sensitivity 0.5, accuracy 0.75.
        let a = combo(
            "A/x",
            &[(0.9, Genuine), (0.1, Genuine), (0.2, SamePersonDifferentWord), (0.3, DifferentPersonSameWord)],
        );
        // B: TP 1, TN 1, FP 1 -> sensitivity 1, accuracy 2/3.
        let b = combo(
            "B/y",
            &[(0.8, Genuine), (0.7, DifferentPersonDifferentWord), (0.4, SamePersonDifferentWord)],
        );
        let agg = aggregate("set", &[a, b]).unwrap();
        assert!((agg.macro_mean["sensitivity"].mean - 0.75).abs() < 1e-12);
        assert!((agg.macro_mean["accuracy"].mean - (0.75 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(agg.macro_mean["sensitivity"].min, 0.5);
        // Pooled: TP 2, FN 1, TN 3, FP 1.
        assert!((agg.pooled.metrics.accuracy.unwrap() - 5.0 / 7.0).abs() < 1e-12);
        let table = performance_table(&agg);
        for row in ["Sensitivity", "Specificity", "Accuracy", "AUC Score", "Equal Error Rate"] {
            assert!(table.contains(&format!("| {row} |")), "{table}");
        }
        assert!(imposter_table(&agg).contains("Same Person-Different Words | 2 |"));
    }

    #[test]
    fn nothing_to_aggregate() {
        assert!(matches!(aggregate("set", &[]), Err(HarnessError::EmptyManifest)));
    }
}
