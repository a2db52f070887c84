//! Model-free parts of the search: midpoint bisection and the inner
//! stability loop. Both take closures so they can be driven by synthetic
//! oracles.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{rse_of, StabilityReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOutcome {
    Unstable,
    Killed,
    Survived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Precision,
    Timeout,
}

/// One bisection step: the bounds in force, the probed midpoint and its outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub lb: f64,
    pub ub: f64,
    pub midpoint: f64,
    pub outcome: ProbeOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bisection {
    pub steps: Vec<BisectionStep>,
    pub final_lb: f64,
    pub final_ub: f64,
    pub termination: Termination,
}

/// Bisect `[lb, ub]` until it is narrower than `precision` or `deadline`
/// passes. Unstable and killed probes lower `ub`; survived probes raise `lb`.
pub fn bisect(
    mut lb: f64,
    mut ub: f64,
    precision: f64,
    deadline: Option<Instant>,
    mut probe: impl FnMut(f64) -> Result<ProbeOutcome>,
) -> Result<Bisection> {
    if !(lb < ub) || !(precision > 0.0) {
        return Err(Error::Config(format!(
            "bisection needs lb < ub and precision > 0 (got [{lb}, {ub}], {precision})"
        )));
    }
    let mut steps = Vec::new();
    let termination = loop {
        if ub - lb < precision {
            break Termination::Precision;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break Termination::Timeout;
        }
        let midpoint = (lb + ub) / 2.0;
        let outcome = probe(midpoint)?;
        steps.push(BisectionStep {
            lb,
            ub,
            midpoint,
            outcome,
        });
        match outcome {
            ProbeOutcome::Unstable | ProbeOutcome::Killed => ub = midpoint,
            ProbeOutcome::Survived => lb = midpoint,
        }
    };
    Ok(Bisection {
        steps,
        final_lb: lb,
        final_ub: ub,
        termination,
    })
}

/// Values gathered by [`stabilize`], one batch per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Stabilized {
    pub batches: Vec<Vec<f64>>,
    pub report: StabilityReport,
}

impl Stabilized {
    /// All values ordered by (position within batch, iteration).
    pub fn values(&self) -> Vec<f64> {
        let width = self.batches.first().map_or(0, Vec::len);
        (0..width)
            .flat_map(|i| self.batches.iter().map(move |b| b[i]))
            .collect()
    }
}

/// Draw batches `k = 1..=k_max` until the pooled RSE drops below `threshold`.
pub fn stabilize(
    k_max: usize,
    threshold: f64,
    mut batch: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<Stabilized> {
    if k_max == 0 {
        return Err(Error::Config("k_max must be >= 1".into()));
    }
    let mut out = Stabilized {
        batches: Vec::with_capacity(k_max),
        report: rse_of(&[], threshold),
    };
    let mut trace = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let b = batch(k)?;
        if out.batches.first().is_some_and(|f| f.len() != b.len()) {
            return Err(Error::Shape("batches differ in size".into()));
        }
        out.batches.push(b);
        let report = rse_of(&out.values(), threshold);
        trace.push(report.rse);
        out.report = report;
        if out.report.stable {
            break;
        }
    }
    out.report.trace = trace;
    Ok(out)
}
