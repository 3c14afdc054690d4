use authnet::corpus::ImposterKind;
use authnet::metrics::{auc, eer, roc, EvalReport, ScoredSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(score: f64, genuine: bool) -> ScoredSample {
    ScoredSample::new(
        score,
        if genuine {
            ImposterKind::Genuine
        } else {
            ImposterKind::DifferentPersonSameWord
        },
    )
}

/// Confusion counts at `score >= t`, recomputed from scratch.
fn counts_at(samples: &[ScoredSample], t: f64) -> (usize, usize, usize, usize) {
    let tp = samples.iter().filter(|s| s.label && s.score >= t).count();
    let fnn = samples.iter().filter(|s| s.label && s.score < t).count();
    let fp = samples.iter().filter(|s| !s.label && s.score >= t).count();
    let tn = samples.iter().filter(|s| !s.label && s.score < t).count();
    (tp, fnn, fp, tn)
}

#[test]
fn roc_matches_exhaustive_threshold_sweep() {
    let data = [
        (0.95, true),
        (0.90, false),
        (0.80, true),
        (0.80, false),
        (0.70, true),
        (0.55, false),
        (0.40, true),
        (0.30, false),
        (0.20, false),
        (0.10, false),
    ];
    let samples: Vec<ScoredSample> = data.iter().map(|&(s, y)| sample(s, y)).collect();
    let curve = roc(&samples).unwrap();

    let mut thresholds: Vec<f64> = data.iter().map(|d| d.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    assert_eq!(curve.points.len(), thresholds.len() + 1);
    assert_eq!((curve.points[0].fpr, curve.points[0].tpr), (0.0, 0.0));
    for (p, &t) in curve.points[1..].iter().zip(&thresholds) {
        let (tp, fnn, fp, tn) = counts_at(&samples, t);
        assert_eq!(p.threshold, Some(t));
        assert_eq!(p.tpr, tp as f64 / (tp + fnn) as f64);
        assert_eq!(p.fpr, fp as f64 / (fp + tn) as f64);
    }
}

#[test]
fn auc_equals_pairwise_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let samples: Vec<ScoredSample> = (0..50)
        .map(|i| {
            let y = i % 3 == 0;
            let s: f64 = rng.gen_range(0.0..1.0) + if y { 0.3 } else { 0.0 };
            sample(s / 1.3, y)
        })
        .collect();
    let mut ordered = 0.0;
    let mut pairs = 0.0;
    for p in samples.iter().filter(|s| s.label) {
        for n in samples.iter().filter(|s| !s.label) {
            pairs += 1.0;
            if p.score > n.score {
                ordered += 1.0;
            } else if p.score == n.score {
                ordered += 0.5;
            }
        }
    }
    let a = auc(&roc(&samples).unwrap());
    assert!((a - ordered / pairs).abs() < 1e-9, "{a} vs {}", ordered / pairs);
    assert!(a > 0.5 && a < 1.0);
}

/// 100 genuine and 100 imposter scores built so that exactly ten of each
/// class fall on the wrong side of 0.5. A dense grid over thresholds, picking
/// the one that minimises |FPR − FNR|, then gives the equal error rate.
#[test]
fn eer_matches_dense_threshold_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut samples = Vec::new();
    for i in 0..100 {
        let wrong = i < 10;
        let pos = if wrong { rng.gen_range(0.05..0.4999) } else { rng.gen_range(0.5001..0.99) };
        let neg = if wrong { rng.gen_range(0.5001..0.95) } else { rng.gen_range(0.01..0.4999) };
        samples.push(sample(pos, true));
        samples.push(sample(neg, false));
    }

    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=100_000 {
        let t = k as f64 / 100_000.0;
        let (tp, fnn, fp, tn) = counts_at(&samples, t);
        let fpr = fp as f64 / (fp + tn) as f64;
        let fnr = fnn as f64 / (tp + fnn) as f64;
        if (fpr - fnr).abs() < best.0 {
            best = ((fpr - fnr).abs(), (fpr + fnr) / 2.0);
        }
    }
    assert_eq!(best.0, 0.0);
    let (e, t) = eer(&roc(&samples).unwrap());
    assert!((e - best.1).abs() < 1e-6, "{e} vs {}", best.1);
    assert!((e - 0.1).abs() < 1e-12);
    let (_, fnn, fp, _) = counts_at(&samples, t);
    assert_eq!((fp, fnn), (10, 10));
}

#[test]
fn report_carries_every_metric() {
    let samples = vec![
        sample(0.9, true),
        sample(0.6, true),
        sample(0.4, true),
        sample(0.7, false),
        sample(0.2, false),
        sample(0.1, false),
    ];
    let r = EvalReport::from_samples(None, &samples, 0.5).unwrap();
    let m = r.metrics;
    assert_eq!(r.confusion.total(), 6);
    assert!((m.sensitivity.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.specificity.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.far.unwrap() - 1.0 / 6.0).abs() < 1e-12);
    assert!((m.far_conventional.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((m.auc.unwrap() - 7.0 / 9.0).abs() < 1e-12);
    assert!(m.eer.is_some() && r.roc.is_some());
    assert_eq!(r.strata[&ImposterKind::DifferentPersonSameWord].count, 3);
}
