use serde::{Deserialize, Serialize};

use super::{MetricsError, ScoredSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples with `score >= threshold` are accepted. `None` stands for +∞,
    /// the sentinel that accepts nothing.
    pub threshold: Option<f64>,
}

/// Points from the strictest to the most lenient threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Builds a curve from explicit points, e.g. one read off a plot.
    pub fn from_points(points: Vec<RocPoint>) -> Self {
        Self { points }
    }
}

/// Sweeps the threshold over every distinct score, high to low.
pub fn roc(samples: &[ScoredSample]) -> Result<RocCurve, MetricsError> {
    if let Some(bad) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(MetricsError::InvalidScore(bad.score));
    }
    let pos = samples.iter().filter(|s| s.label).count() as f64;
    let neg = samples.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(MetricsError::SingleClassScores);
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg,
            tpr: tp as f64 / pos,
            threshold: Some(s),
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn pairwise_auc(samples: &[ScoredSample]) -> Result<f64, MetricsError> {
    let pos: Vec<f64> = samples.iter().filter(|s| s.label).map(|s| s.score).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| !s.label).map(|s| s.score).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricsError::SingleClassScores);
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Equal error rate where the curve meets `FPR + TPR = 1`, interpolating
/// linearly between neighbouring points. Returns `(eer, threshold)`; the
/// threshold is interpolated the same way, and taken from the finite end of
/// a segment that starts at the +∞ sentinel.
pub fn eer(curve: &RocCurve) -> (f64, f64) {
    let g = |p: &RocPoint| p.fpr + p.tpr - 1.0;
    let pts = &curve.points;
    let Some(i) = pts.iter().position(|p| g(p) >= 0.0) else {
        let last = pts.last().expect("curve has points");
        return (last.fpr, last.threshold.unwrap_or(f64::INFINITY));
    };
    let b = pts[i];
    if g(&b) == 0.0 || i == 0 {
        return (b.fpr, b.threshold.unwrap_or(f64::INFINITY));
    }
    let a = pts[i - 1];
    let alpha = -g(&a) / (g(&b) - g(&a));
    let fpr = a.fpr + alpha * (b.fpr - a.fpr);
    let threshold = match (a.threshold, b.threshold) {
        (Some(ta), Some(tb)) => ta + alpha * (tb - ta),
        (None, Some(t)) | (Some(t), None) => t,
        (None, None) => f64::INFINITY,
    };
    (fpr, threshold)
}
