//! Shared fixtures for the benchmarks: a trained blob subject at the scale of
//! the end-to-end tests.

use std::sync::Arc;

use nnmut_core::data::make_synthetic_classification;
use nnmut_core::train::{train_population, OriginalPopulation, TrainingConfig};
use nnmut_core::{Activation, Dataset, ModelGraph, Task};

pub struct Subject {
    pub originals: OriginalPopulation,
    pub train: Dataset,
    pub test: Dataset,
}

/// 10-class blobs, MLP 2-64-64-10, `m` originals.
pub fn blob_subject(m: usize) -> Subject {
    let (train, test) = make_synthetic_classification(10, 200, 0.15, 1).expect("valid recipe");
    let graph = Arc::new(
        ModelGraph::mlp(2, &[64, 64], 10, Activation::Relu, Task::Classification)
            .expect("valid graph"),
    );
    let cfg = TrainingConfig {
        epochs: 10,
        ..TrainingConfig::default()
    };
    let originals = train_population(graph, &train, &cfg, m, 7).expect("training converges");
    Subject {
        originals,
        train,
        test,
    }
}
