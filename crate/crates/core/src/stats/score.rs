//! Mutation scores, sensitivity and the disagreement rate.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Score, Undefined};
use crate::data::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::eval::{argmax, predict};
use crate::model::ModelInstance;
use crate::train::OriginalPopulation;

/// Percentage of input columns on which the instances split between correct
/// and incorrect. Columns where every instance is wrong do not count.
pub fn disagreement_rate(correctness: &[Vec<bool>]) -> Result<f64> {
    let Some(first) = correctness.first() else {
        return Err(Error::Precondition("empty correctness matrix".into()));
    };
    if first.is_empty() {
        return Err(Error::Precondition("empty correctness matrix".into()));
    }
    if correctness.len() < 2 {
        return Err(Error::Precondition(
            "disagreement needs at least two instances".into(),
        ));
    }
    let cols = first.len();
    if correctness.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged correctness matrix".into()));
    }
    let mixed = (0..cols)
        .filter(|&c| {
            let right = correctness.iter().filter(|r| r[c]).count();
            right > 0 && right < correctness.len()
        })
        .count();
    Ok(100.0 * mixed as f64 / cols as f64)
}

/// Class-level score from precomputed predictions.
///
/// Class `c` is killed for mutant `i` when some input of true class `c` is
/// predicted correctly by the reference and wrongly by the mutant.
pub fn classlevel_from_predictions(
    reference: &[u32],
    mutants: &[Vec<u32>],
    labels: &[u32],
    classes: &[u32],
) -> Result<f64> {
    if mutants.is_empty() || classes.is_empty() {
        return Err(Error::Precondition(
            "class-level score needs mutants and classes".into(),
        ));
    }
    if reference.len() != labels.len() || mutants.iter().any(|m| m.len() != labels.len()) {
        return Err(Error::Shape("prediction and label lengths differ".into()));
    }
    let killed: usize = mutants
        .iter()
        .map(|m| {
            let mut hit = BTreeSet::new();
            for ((&y, &r), &p) in labels.iter().zip(reference).zip(m) {
                if r == y && p != y {
                    hit.insert(y);
                }
            }
            hit.len()
        })
        .sum();
    Ok(killed as f64 / (mutants.len() * classes.len()) as f64)
}

/// Class-level mutation score of single mutant instances, with the first
/// original instance as reference.
pub fn mutation_score_classlevel(
    originals: &OriginalPopulation,
    mutants: &[ModelInstance],
    data: &Dataset,
) -> Result<f64> {
    let Labels::Classes(labels) = &data.labels else {
        return Err(Error::Unsupported(
            "class-level score on a regression task".into(),
        ));
    };
    let predict_classes = |m: &ModelInstance| -> Result<Vec<u32>> {
        let out = predict(m, &data.inputs)?;
        Ok((0..out.rows).map(|r| argmax(out.row(r)) as u32).collect())
    };
    let reference = predict_classes(&originals.instances[0])?;
    let preds = mutants
        .iter()
        .map(predict_classes)
        .collect::<Result<Vec<_>>>()?;
    classlevel_from_predictions(&reference, &preds, labels, &data.classes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Set cardinalities over the explored configurations.
    Discrete,
    /// Interval lengths over a monotone parameter range.
    Boundary,
}

/// Configurations killed on one dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KillSet {
    /// Ids of killed configurations among those explored.
    pub configs: BTreeSet<String>,
    /// Smallest killing parameter value; `None` when nothing was killed.
    pub boundary: Option<f64>,
}

/// Per-dataset kill sets of one operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KillabilityRecord {
    pub operator: String,
    /// Parameter range `[lb, ub]` of the searched parameter.
    pub lb: f64,
    pub ub: f64,
    /// Killing is declared monotone in the parameter, so boundaries are meaningful.
    pub monotone: bool,
    pub per_dataset: BTreeMap<String, KillSet>,
}

/// `|test ∩ train| / |train|`; undefined when the train set killed nothing.
pub fn mutation_score_discrete(train: &BTreeSet<String>, test: &BTreeSet<String>) -> Score {
    if train.is_empty() {
        return Score::Undefined(Undefined::NoTrainKills);
    }
    Score::Value(train.intersection(test).count() as f64 / train.len() as f64)
}

/// `(ub - b_test) / (ub - b_train)` clamped to `[0, 1]`, where the killed
/// region on a dataset is `[b, ub]`. A missing test boundary scores 0; a
/// missing train boundary is undefined.
pub fn mutation_score_boundary(ub: f64, b_train: Option<f64>, b_test: Option<f64>) -> Score {
    let Some(b_train) = b_train else {
        return Score::Undefined(Undefined::NoTrainKills);
    };
    let Some(b_test) = b_test else {
        return Score::Value(0.0);
    };
    let width = ub - b_train;
    if width <= 0.0 {
        // train kills only at the upper end: covered iff test does too
        return Score::Value(if b_test <= b_train { 1.0 } else { 0.0 });
    }
    Score::Value(((ub - b_test) / width).clamp(0.0, 1.0))
}

pub fn mutation_score_configlevel(
    rec: &KillabilityRecord,
    train: &str,
    test: &str,
    mode: ScoreMode,
) -> Result<Score> {
    let get = |name: &str| {
        rec.per_dataset
            .get(name)
            .ok_or_else(|| Error::Precondition(format!("no kill set for dataset `{name}`")))
    };
    let (k_train, k_test) = (get(train)?, get(test)?);
    match mode {
        ScoreMode::Discrete => Ok(mutation_score_discrete(&k_train.configs, &k_test.configs)),
        ScoreMode::Boundary => {
            if !rec.monotone {
                return Err(Error::Precondition(format!(
                    "boundary score for non-monotone operator {}",
                    rec.operator
                )));
            }
            Ok(mutation_score_boundary(
                rec.ub,
                k_train.boundary,
                k_test.boundary,
            ))
        }
    }
}

/// `(ms_strong - ms_weak) / ms_strong`.
///
/// A weak set that kills nothing scores 0 and therefore yields 1.0. An
/// undefined strong score propagates; a zero strong score is a division by
/// zero and is reported as such.
pub fn sensitivity(ms_strong: Score, ms_weak: Score) -> Score {
    let s = match ms_strong {
        Score::Undefined(u) => return Score::Undefined(u),
        Score::Value(s) => s,
    };
    if s == 0.0 {
        return Score::Undefined(Undefined::DivZero);
    }
    match ms_weak {
        Score::Undefined(u) => Score::Undefined(u),
        Score::Value(w) => Score::Value((s - w) / s),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn disagreement_counts_mixed_columns_only() {
        let all_right = vec![vec![true; 5]; 3];
        assert_eq!(disagreement_rate(&all_right).unwrap(), 0.0);
        let all_wrong = vec![vec![false; 5]; 3];
        assert_eq!(disagreement_rate(&all_wrong).unwrap(), 0.0);

        let mut m = vec![vec![true; 100]; 20];
        for c in 0..32 {
            m[c % 20][c] = false;
        }
        for row in m.iter_mut() {
            row[99] = false;
        }
        assert!((disagreement_rate(&m).unwrap() - 32.0).abs() < 1e-12);
        assert!(disagreement_rate(&[]).is_err());
        assert!(disagreement_rate(&[vec![true]]).is_err());
    }

    #[test]
    fn classlevel_three_of_ten() {
        let labels: Vec<u32> = (0..50).map(|i| i % 10).collect();
        let reference = labels.clone();
        let mutant: Vec<u32> = labels
            .iter()
            .map(|&y| if y < 3 { (y + 1) % 10 } else { y })
            .collect();
        let classes: Vec<u32> = (0..10).collect();
        let ms = classlevel_from_predictions(&reference, &[mutant], &labels, &classes).unwrap();
        assert!((ms - 0.3).abs() < 1e-12);
        let same = classlevel_from_predictions(&reference, std::slice::from_ref(&reference), &labels, &classes)
            .unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn classlevel_two_class_exhaustive() {
        // every (reference, mutant) prediction vector over 3 inputs of a 2-class toy
        let labels = [0u32, 1, 1];
        for r in 0..8u32 {
            for m in 0..8u32 {
                let reference: Vec<u32> = (0..3).map(|i| r >> i & 1).collect();
                let mutant: Vec<u32> = (0..3).map(|i| m >> i & 1).collect();
                let mut expected = 0;
                for c in 0..2u32 {
                    if (0..3).any(|i| labels[i] == c && reference[i] == c && mutant[i] != c) {
                        expected += 1;
                    }
                }
                let ms =
                    classlevel_from_predictions(&reference, &[mutant], &labels, &[0, 1]).unwrap();
                assert_eq!(ms, expected as f64 / 2.0);
            }
        }
    }

    #[test]
    fn boundary_score_reference_values() {
        let ms = mutation_score_boundary(1.0, Some(0.3), Some(0.5))
            .value()
            .unwrap();
        assert!((ms - 0.5 / 0.7).abs() < 1e-12);
        assert_eq!(
            mutation_score_boundary(1.0, Some(0.3), Some(0.3)),
            Score::Value(1.0)
        );
        assert_eq!(
            mutation_score_boundary(1.0, Some(0.3), None),
            Score::Value(0.0)
        );
        assert_eq!(
            mutation_score_boundary(1.0, Some(0.3), Some(0.1)),
            Score::Value(1.0)
        );
        assert_eq!(
            mutation_score_boundary(1.0, None, Some(0.1)),
            Score::Undefined(Undefined::NoTrainKills)
        );
    }

    #[test]
    fn discrete_score() {
        let train = set(&["a", "b", "c", "d"]);
        assert_eq!(mutation_score_discrete(&train, &train), Score::Value(1.0));
        assert_eq!(
            mutation_score_discrete(&train, &set(&[])),
            Score::Value(0.0)
        );
        assert_eq!(
            mutation_score_discrete(&train, &set(&["a", "x"])),
            Score::Value(0.25)
        );
        assert_eq!(
            mutation_score_discrete(&set(&[]), &set(&["a"])),
            Score::Undefined(Undefined::NoTrainKills)
        );
    }

    #[test]
    fn configlevel_requires_monotone_for_boundary() {
        let mut rec = KillabilityRecord {
            operator: "NAI".into(),
            lb: 0.0,
            ub: 1.0,
            monotone: false,
            per_dataset: BTreeMap::new(),
        };
        rec.per_dataset.insert(
            "train".into(),
            KillSet {
                configs: set(&["x"]),
                boundary: Some(0.3),
            },
        );
        rec.per_dataset.insert(
            "test".into(),
            KillSet {
                configs: set(&["x"]),
                boundary: Some(0.5),
            },
        );
        assert!(mutation_score_configlevel(&rec, "train", "test", ScoreMode::Boundary).is_err());
        assert_eq!(
            mutation_score_configlevel(&rec, "train", "test", ScoreMode::Discrete).unwrap(),
            Score::Value(1.0)
        );
        rec.monotone = true;
        let ms = mutation_score_configlevel(&rec, "train", "test", ScoreMode::Boundary).unwrap();
        assert!((ms.value().unwrap() - 0.714286).abs() < 1e-6);
        assert!(mutation_score_configlevel(&rec, "train", "weak", ScoreMode::Discrete).is_err());
    }

    #[test]
    fn sensitivity_edge_cases() {
        assert!(
            (sensitivity(Score::Value(0.8), Score::Value(0.2))
                .value()
                .unwrap()
                - 0.75)
                .abs()
                < 1e-12
        );
        assert_eq!(
            sensitivity(Score::Value(0.6), Score::Value(0.0)),
            Score::Value(1.0)
        );
        assert_eq!(
            sensitivity(Score::Value(0.6), Score::Value(0.6)),
            Score::Value(0.0)
        );
        assert_eq!(
            sensitivity(Score::Value(0.0), Score::Value(0.0)),
            Score::Undefined(Undefined::DivZero)
        );
        let unk = Score::Undefined(Undefined::NoTrainKills);
        assert_eq!(sensitivity(unk, unk), unk);
    }

    proptest! {
        #[test]
        fn disagreement_permutation_invariant(
            bits in prop::collection::vec(prop::collection::vec(any::<bool>(), 12), 2..8),
            rot in 0usize..12,
        ) {
            let base = disagreement_rate(&bits).unwrap();
            let mut rows = bits.clone();
            rows.reverse();
            prop_assert_eq!(disagreement_rate(&rows).unwrap(), base);
            let cols: Vec<Vec<bool>> = bits.iter().map(|r| {
                let mut r = r.clone();
                r.rotate_left(rot);
                r
            }).collect();
            prop_assert_eq!(disagreement_rate(&cols).unwrap(), base);
        }

        #[test]
        fn sensitivity_is_one_minus_ratio(s in 0.01f64..1.0, w in 0.0f64..1.0) {
            let v = sensitivity(Score::Value(s), Score::Value(w)).value().unwrap();
            prop_assert!((v - (1.0 - w / s)).abs() < 1e-12);
            prop_assert!(v <= 1.0);
        }

        #[test]
        fn boundary_score_in_unit_interval(bt in 0.0f64..1.0, bs in 0.0f64..1.0) {
            let v = mutation_score_boundary(1.0, Some(bt), Some(bs)).value().unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
