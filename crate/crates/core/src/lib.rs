//! Post-training mutation testing for feedforward neural networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: network graphs, weight instances, the on-disk interchange
//!   format and deterministic batched inference.
//! * [`data`]: datasets, the builtin synthetic recipes and the IDX importer.
//! * [`train`]: a small SGD trainer that manufactures populations of
//!   independently seeded original models.
//! * [`operators`]: seeded weight- and neuron-level mutation operators,
//!   including the weight and neuron inhibitors.
//! * [`stats`]: accuracy samples, RSE stability, statistical killing,
//!   mutation scores, sensitivity and weak-set construction.
//! * [`search`]: bisection over a single operator parameter with an inner
//!   stability loop, producing an archive of stable killed mutants.
//! * [`spectral`]: activation spectra and log-Euclidean distances.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod operators;
pub mod rng;
pub mod search;
pub mod spectral;
pub mod stats;
pub mod train;

pub use data::{Dataset, Labels, Split};
pub use error::{Error, Result};
pub use model::{Activation, LayerSpec, Matrix, ModelGraph, ModelInstance, Provenance, Task};

pub use operators::{NeuronAddress, OperatorConfig, OperatorKind, SearchedParam};
pub use search::{MutantArchiveEntry, ProbeOutcome, SearchConfig, SearchTrace, Termination};
pub use spectral::{DistanceMatrix, SpectrumProfile};
pub use stats::{
    EvaluationSample, KillDecision, KillThresholds, Score, StabilityReport, Undefined,
};
pub use train::{OriginalPopulation, TrainingConfig};
