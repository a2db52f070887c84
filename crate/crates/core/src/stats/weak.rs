//! Weak test sets: the subset of a strong test set the originals handle
//! most confidently.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Labels, Split};
use crate::error::{Error, Result};
use crate::eval::predict;
use crate::model::{softmax_in_place, Activation};
use crate::train::OriginalPopulation;

pub const DEFAULT_KEEP_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakDirection {
    /// Keep the inputs with the highest mean true-class probability
    /// (classification) or lowest mean loss (regression).
    #[default]
    KeepEasy,
    /// The inverse ranking.
    KeepHard,
}

/// Keep `floor(q * N)` inputs of `strong` ranked by the originals' mean
/// confidence. Ties go to the lower index; the result preserves input order.
pub fn build_weak_set(
    strong: &Dataset,
    originals: &OriginalPopulation,
    keep_fraction: f64,
    direction: WeakDirection,
) -> Result<Dataset> {
    if !(keep_fraction > 0.0 && keep_fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "keep fraction {keep_fraction} outside (0, 1)"
        )));
    }
    let n = strong.len();
    let keep = (keep_fraction * n as f64).floor() as usize;
    if keep < 1 {
        return Err(Error::Precondition(format!(
            "keep fraction {keep_fraction} of {n} inputs keeps nothing"
        )));
    }
    // higher = easier
    let mut ease = vec![0.0f64; n];
    let softmax_head =
        originals.graph.layers.last().and_then(|l| l.activation()) == Some(Activation::Softmax);
    for inst in &originals.instances {
        let mut out = predict(inst, &strong.inputs)?;
        match &strong.labels {
            Labels::Classes(c) => {
                for (r, e) in ease.iter_mut().enumerate() {
                    let row = out.row_mut(r);
                    if !softmax_head {
                        softmax_in_place(row);
                    }
                    *e += row[c[r] as usize] as f64;
                }
            }
            Labels::Targets(t) => {
                for (r, e) in ease.iter_mut().enumerate() {
                    let loss: f64 = out
                        .row(r)
                        .iter()
                        .zip(t.row(r))
                        .map(|(p, y)| ((p - y) as f64).powi(2))
                        .sum::<f64>()
                        / t.cols as f64;
                    *e -= loss;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    match direction {
        WeakDirection::KeepEasy => {
            order.sort_by(|&a, &b| ease[b].total_cmp(&ease[a]).then(a.cmp(&b)))
        }
        WeakDirection::KeepHard => {
            order.sort_by(|&a, &b| ease[a].total_cmp(&ease[b]).then(a.cmp(&b)))
        }
    }
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    strong.subset(&kept, format!("{}-weak", strong.name), Split::WeakTest)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::data::make_synthetic_classification;
    use crate::eval::population_metrics;
    use crate::model::{
        LayerParams, LayerSpec, Matrix, ModelGraph, ModelInstance, Provenance, Task,
    };
    use crate::stats::mean;
    use crate::train::{train_population, TrainingConfig};

    /// 1 -> 2 softmax with logits [0, x]: P(class 1) = sigmoid(x).
    fn sigmoid_population() -> OriginalPopulation {
        let graph = Arc::new(
            ModelGraph::new(
                vec![1],
                Task::Classification,
                vec![LayerSpec::dense(1, 2, Activation::Softmax)],
            )
            .unwrap(),
        );
        let inst = |s| {
            ModelInstance::new(
                graph.clone(),
                vec![Some(LayerParams {
                    kernel: vec![0.0, 1.0],
                    bias: Some(vec![0.0, 0.0]),
                })],
                Provenance::TrainedOriginal { seed: s },
            )
            .unwrap()
        };
        OriginalPopulation::from_instances(vec![inst(0), inst(1)], vec![0, 1]).unwrap()
    }

    fn ramp(xs: &[f32]) -> Dataset {
        Dataset::new(
            "ramp",
            Split::StrongTest,
            vec![1],
            Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap(),
            Labels::Classes(vec![1; xs.len()]),
        )
        .unwrap()
    }

    #[test]
    fn near_one_drops_only_the_hardest() {
        let pop = sigmoid_population();
        let xs = [0.5, 2.0, -1.5, 1.0, 0.0, 3.0, -0.5, 1.5, 2.5, 0.25];
        let weak = build_weak_set(&ramp(&xs), &pop, 1.0 - 1e-9, WeakDirection::KeepEasy).unwrap();
        assert_eq!(weak.len(), 9);
        assert!(!weak.inputs.data.contains(&-1.5));
        assert_eq!(weak.split, Split::WeakTest);
        let hard = build_weak_set(&ramp(&xs), &pop, 0.2, WeakDirection::KeepHard).unwrap();
        assert_eq!(hard.inputs.data, vec![-1.5, -0.5]);
    }

    #[test]
    fn ties_keep_lowest_indices() {
        let graph =
            Arc::new(ModelGraph::mlp(2, &[4], 3, Activation::Relu, Task::Classification).unwrap());
        let pop = OriginalPopulation::from_instances(
            vec![
                ModelInstance::zeros(graph.clone()),
                ModelInstance::zeros(graph),
            ],
            vec![0, 1],
        )
        .unwrap();
        let inputs = Matrix::from_vec(100, 2, (0..200).map(|i| i as f32 / 50.0).collect()).unwrap();
        let data = Dataset::new(
            "flat",
            Split::StrongTest,
            vec![2],
            inputs,
            Labels::Classes((0..100).map(|i| i % 3).collect()),
        )
        .unwrap();
        let weak = build_weak_set(&data, &pop, 0.75, WeakDirection::KeepEasy).unwrap();
        assert_eq!(weak.inputs, data.inputs.slice_rows(0, 75));
    }

    #[test]
    fn weak_set_is_easier_on_blobs() {
        let (train, test) = make_synthetic_classification(4, 100, 0.45, 3).unwrap();
        let graph =
            Arc::new(ModelGraph::mlp(2, &[16], 4, Activation::Relu, Task::Classification).unwrap());
        let cfg = TrainingConfig {
            epochs: 10,
            ..TrainingConfig::default()
        };
        let pop = train_population(graph, &train, &cfg, 3, 11).unwrap();
        let weak = build_weak_set(&test, &pop, 0.75, WeakDirection::KeepEasy).unwrap();
        assert_eq!(weak.len(), 60);
        let strong_acc = mean(&population_metrics(&pop.instances, &test, None).unwrap());
        let weak_acc = mean(&population_metrics(&pop.instances, &weak, None).unwrap());
        assert!(weak_acc >= strong_acc, "{weak_acc} < {strong_acc}");
    }

    #[test]
    fn rejects_bad_fractions() {
        let pop = sigmoid_population();
        let data = ramp(&[0.0, 1.0, 2.0]);
        assert!(build_weak_set(&data, &pop, 0.0, WeakDirection::KeepEasy).is_err());
        assert!(build_weak_set(&data, &pop, 1.0, WeakDirection::KeepEasy).is_err());
        assert!(build_weak_set(&data, &pop, 0.2, WeakDirection::KeepEasy).is_err());
    }
}
