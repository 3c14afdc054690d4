use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{cosine_difference, EmbedError, FeatureSequence};
use crate::corpus::{ImposterKind, Target, UtteranceKey};

/// One point of the per-timestep variation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationRow {
    pub target: Target,
    /// `SamePersonDifferentWord` or `DifferentPersonSameWord`.
    pub case: ImposterKind,
    pub timestep: usize,
    pub mean_difference: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariationTable {
    pub rows: Vec<VariationRow>,
}

impl VariationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("speaker,word,case,timestep,mean_cosine_difference,pairs\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.8},{}",
                r.target.speaker,
                r.target.word,
                r.case.id(),
                r.timestep,
                r.mean_difference,
                r.pairs
            );
        }
        out
    }

    pub fn curve(&self, target: &Target, case: ImposterKind) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| &r.target == target && r.case == case)
            .map(|r| r.mean_difference)
            .collect()
    }
}

/// For each target and each timestep `t`, the mean cosine difference between
/// row `t` of every genuine utterance and row `t` of every utterance in the
/// comparison group. Groups without any pair are omitted.
pub fn feature_variation_report(
    features: &BTreeMap<UtteranceKey, FeatureSequence>,
    targets: &[Target],
) -> Result<VariationTable, EmbedError> {
    let mut backend: Option<&str> = None;
    let mut shape: Option<(usize, usize)> = None;
    for seq in features.values() {
        if *backend.get_or_insert(&seq.backend_id) != seq.backend_id {
            return Err(EmbedError::InvalidInput(
                "features come from different backends".into(),
            ));
        }
        if *shape.get_or_insert(seq.matrix.dim()) != seq.matrix.dim() {
            return Err(EmbedError::DimensionMismatch {
                expected: shape.unwrap().1,
                found: seq.dimension(),
            });
        }
    }

    let mut table = VariationTable::default();
    for target in targets {
        let genuine: Vec<&FeatureSequence> = features
            .iter()
            .filter(|(k, _)| k.speaker == target.speaker && k.word == target.word)
            .map(|(_, v)| v)
            .collect();
        if genuine.is_empty() {
            continue;
        }
        for case in [
            ImposterKind::SamePersonDifferentWord,
            ImposterKind::DifferentPersonSameWord,
        ] {
            let others: Vec<&FeatureSequence> = features
                .iter()
                .filter(|(k, _)| crate::corpus::classify_imposter(k, target) == case)
                .map(|(_, v)| v)
                .collect();
            if others.is_empty() {
                continue;
            }
            let timesteps = genuine[0].timesteps();
            for t in 0..timesteps {
                let mut sum = 0.0;
                for g in &genuine {
                    for o in &others {
                        let a = g.row(t);
                        let b = o.row(t);
                        sum += cosine_difference(
                            a.as_slice().expect("row-major"),
                            b.as_slice().expect("row-major"),
                        )?;
                    }
                }
                let pairs = genuine.len() * others.len();
                table.rows.push(VariationRow {
                    target: target.clone(),
                    case,
                    timestep: t,
                    mean_difference: sum / pairs as f64,
                    pairs,
                });
            }
        }
    }
    if table.rows.is_empty() {
        return Err(EmbedError::InsufficientSamples(
            "no target utterance has a comparison utterance".into(),
        ));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn seq(key: &UtteranceKey, rows: Array2<f32>) -> FeatureSequence {
        FeatureSequence {
            matrix: rows,
            source: Some(key.clone()),
            backend_id: "test".into(),
            pad_count: 0,
        }
    }

    #[test]
    fn identical_features_have_zero_difference() {
        let m = Array2::from_shape_fn((3, 4), |(t, d)| (t + d + 1) as f32);
        let mut f = BTreeMap::new();
        for s in ["A", "B"] {
            for w in ["x", "y"] {
                let k = UtteranceKey::new(s, w, 0);
                f.insert(k.clone(), seq(&k, m.clone()));
            }
        }
        let table = feature_variation_report(&f, &[Target::new("A", "x")]).unwrap();
        assert_eq!(table.rows.len(), 6);
        assert!(table.rows.iter().all(|r| r.mean_difference.abs() < 1e-12 && r.pairs == 1));
    }

    #[test]
    fn two_utterances_give_one_pair_per_timestep() {
        let a = UtteranceKey::new("A", "x", 0);
        let b = UtteranceKey::new("B", "x", 0);
        let mut f = BTreeMap::new();
        f.insert(a.clone(), seq(&a, Array2::from_shape_vec((2, 2), vec![1., 0., 1., 2.]).unwrap()));
        f.insert(b.clone(), seq(&b, Array2::from_shape_vec((2, 2), vec![0., 1., 2., 1.]).unwrap()));
        let table = feature_variation_report(&f, &[Target::new("A", "x")]).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows.iter().all(|r| r.case == ImposterKind::DifferentPersonSameWord));
        assert!((table.rows[0].mean_difference - 1.0).abs() < 1e-12);
        assert!((table.rows[1].mean_difference - 0.2).abs() < 1e-9);
        assert!(table.to_csv().lines().count() == 3);
    }

    #[test]
    fn lone_target_is_insufficient() {
        let a = UtteranceKey::new("A", "x", 0);
        let mut f = BTreeMap::new();
        f.insert(a.clone(), seq(&a, Array2::ones((2, 2))));
        assert!(matches!(
            feature_variation_report(&f, &[Target::new("A", "x")]),
            Err(EmbedError::InsufficientSamples(_))
        ));
    }
}
