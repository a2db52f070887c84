//! Metric machinery: samples, stability, statistical killing, mutation
//! scores, sensitivity, disagreement and weak-test-set construction.

mod kill;
mod rse;
mod score;
mod weak;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kill::{
    cohens_d, is_killed, mann_whitney_u, KillDecision, KillThresholds, MannWhitney, TestMethod,
};
pub use rse::{rse, rse_of, StabilityReport, DEFAULT_RSE_THRESHOLD};
pub use score::{
    disagreement_rate, mutation_score_boundary, mutation_score_classlevel,
    mutation_score_configlevel, mutation_score_discrete, sensitivity, KillSet, KillabilityRecord,
    ScoreMode,
};
pub use weak::{build_weak_set, WeakDirection, DEFAULT_KEEP_FRACTION};

/// Per-instance metric values of one population on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSample {
    pub values: Vec<f64>,
    pub dataset: String,
    pub population: String,
    /// Applications per original (`n`); 1 for an original population.
    pub n_per_original: usize,
    /// Originals (`m`).
    pub originals: usize,
}

impl EvaluationSample {
    pub fn new(
        values: Vec<f64>,
        dataset: impl Into<String>,
        population: impl Into<String>,
        n_per_original: usize,
        originals: usize,
    ) -> Result<Self> {
        if values.len() != n_per_original * originals {
            return Err(Error::Precondition(format!(
                "{} values for n = {n_per_original}, m = {originals}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Precondition(format!(
                "metric value {v} outside [0, 1]"
            )));
        }
        Ok(EvaluationSample {
            values,
            dataset: dataset.into(),
            population: population.into(),
            n_per_original,
            originals,
        })
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }
}

/// Why a metric has no numeric value. Serialized as the marker strings used
/// in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Undefined {
    /// The training set killed no configuration.
    #[serde(rename = "U/NK")]
    NoTrainKills,
    /// Division by a zero mutation score.
    #[serde(rename = "undefined-div0")]
    DivZero,
    #[serde(rename = "N/A")]
    NotApplicable,
}

/// A real value or an explicit undefined marker; never collapsed to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Score {
    Value(f64),
    Undefined(Undefined),
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Undefined(_) => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Score::Value(_))
    }
}

impl std::fmt::Display for Score {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Score::Value(v) => write!(f, "{v:.6}"),
            Score::Undefined(u) => f.write_str(match u {
                Undefined::NoTrainKills => "U/NK",
                Undefined::DivZero => "undefined-div0",
                Undefined::NotApplicable => "N/A",
            }),
        }
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Bessel-corrected sample variance; 0 for fewer than two values.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// `f64` fields that may be infinite serialize as `"inf"` / `"-inf"`.
pub mod serde_extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "invalid number `{other}`"
                ))),
            },
        }
    }
}
