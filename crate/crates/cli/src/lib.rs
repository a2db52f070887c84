//! Command-line pipeline around `nnmut-core`: config loading, the run
//! directory layout and the train, search, score, spectra and report steps.

pub mod config;
pub mod error;
pub mod layout;
pub mod pipeline;
pub mod report;
