//! Statistical killing: Cohen's d with pooled standard deviation and a
//! two-sided Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{mean, sample_variance, EvaluationSample};
use crate::error::{Error, Result};

/// Below this size (in either sample) the U distribution is enumerated exactly.
const EXACT_BELOW: usize = 8;
/// Exact enumeration is quadratic in the pooled size; larger pools use the
/// normal approximation regardless.
const EXACT_MAX_POOLED: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KillThresholds {
    /// Significance level.
    pub alpha: f64,
    /// Minimum effect size.
    pub beta: f64,
}

impl Default for KillThresholds {
    fn default() -> Self {
        KillThresholds {
            alpha: 0.05,
            beta: 0.5,
        }
    }
}

impl KillThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta {} must be >= 0", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KillDecision {
    pub killed: bool,
    #[serde(with = "super::serde_extended_f64")]
    pub effect_size: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub method: TestMethod,
}

/// `|mean(a) - mean(b)| / pooled_sd`; `+inf` when both samples are constant
/// with different means, 0 when they are constant and equal.
pub fn cohens_d(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let diff = (mean(a) - mean(b)).abs();
    let dof = na + nb - 2.0;
    let pooled = if dof > 0.0 {
        (((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / dof).sqrt()
    } else {
        0.0
    };
    if pooled == 0.0 {
        return if diff == 0.0 { 0.0 } else { f64::INFINITY };
    }
    diff / pooled
}

/// Mid-ranks (1-based) of the pooled sample, plus tie-group sizes.
fn pooled_ranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        for p in &pooled[i..j] {
            ranks[p.1] = mid;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// Two-sided Mann-Whitney U test.
///
/// When either sample has fewer than 8 values (and the pooled size is at
/// most 200) the p-value comes from the exact permutation distribution of
/// the rank sum, ties included. Otherwise the normal approximation with tie
/// correction and a 0.5 continuity correction is used.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> MannWhitney {
    let (n1, n2) = (a.len(), b.len());
    let (ranks, ties) = pooled_ranks(a, b);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let n = (n1 + n2) as f64;
    if n1.min(n2) < EXACT_BELOW && n1 + n2 <= EXACT_MAX_POOLED {
        let p = exact_p_value(&ranks, n1, r1);
        return MannWhitney {
            u,
            p_value: p,
            method: TestMethod::Exact,
        };
    }
    let mu = (n1 * n2) as f64 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    MannWhitney {
        u,
        p_value: p,
        method: TestMethod::Normal,
    }
}

/// Exact two-sided p-value of the observed rank sum `r1` of the first `n1`
/// entries, by dynamic programming over subsets of the pooled (doubled,
/// hence integral) mid-ranks.
fn exact_p_value(ranks: &[f64], n1: usize, r1: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0.0f64; total + 1]; n1 + 1];
    counts[0][0] = 1.0;
    for (seen, &r) in doubled.iter().enumerate() {
        for j in (1..=n1.min(seen + 1)).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            for s in (r..=total).rev() {
                if prev[s - r] != 0.0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    let dist = &counts[n1];
    let all: f64 = dist.iter().sum();
    let expected = n1 as f64 * (ranks.len() as f64 + 1.0); // doubled mean rank sum
    let observed = (2.0 * r1 - expected).abs();
    let extreme: f64 = dist
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as f64 - expected).abs() >= observed - 1e-9)
        .map(|(_, c)| c)
        .sum();
    (extreme / all).min(1.0)
}

/// Kill decision for a mutant sample against the originals' sample:
/// killed iff effect size >= beta and p-value < alpha.
pub fn is_killed(
    mutant: &EvaluationSample,
    original: &EvaluationSample,
    th: &KillThresholds,
) -> KillDecision {
    is_killed_values(&mutant.values, &original.values, th)
}

pub(crate) fn is_killed_values(
    mutant: &[f64],
    original: &[f64],
    th: &KillThresholds,
) -> KillDecision {
    let d = cohens_d(mutant, original);
    if d.is_infinite() {
        return KillDecision {
            killed: true,
            effect_size: d,
            p_value: 0.0,
        };
    }
    if d == 0.0 && sample_variance(mutant) == 0.0 && sample_variance(original) == 0.0 {
        return KillDecision {
            killed: false,
            effect_size: 0.0,
            p_value: 1.0,
        };
    }
    let p = mann_whitney_u(mutant, original).p_value;
    KillDecision {
        killed: d >= th.beta && p < th.alpha,
        effect_size: d,
        p_value: p,
    }
}
