//! Activation spectra and log-Euclidean distances between mutants.
//!
//! A spectrum is, for each input, the normalized histogram of the activation
//! values of the selected layers' neurons, pooled over all instances of one
//! mutant configuration.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{Matrix, ModelGraph, ModelInstance};
use crate::rng::rng_from;

pub const LOG_EPSILON: f64 = 1e-12;
pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_UPPER_PERCENTILE: f64 = 99.9;
pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.1;

const CHUNK: usize = 512;

/// Fixed binning shared by all profiles that are to be compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub layers: Vec<usize>,
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Binning {
    pub fn new(layers: Vec<usize>, bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Binning("empty layer selection".into()));
        }
        if bins < 2 {
            return Err(Error::Binning(format!("{bins} bins; at least 2 required")));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Binning(format!("invalid range [{lo}, {hi}]")));
        }
        Ok(Binning {
            layers,
            bins,
            lo,
            hi,
        })
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins).map(|i| self.lo + w * i as f64).collect()
    }

    /// Bin of `v`, clipping values outside `[lo, hi]` into the end bins.
    pub fn bin_of(&self, v: f32) -> usize {
        let t = (v as f64 - self.lo) / (self.hi - self.lo) * self.bins as f64;
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(self.bins - 1)
        }
    }

    fn check_graph(&self, graph: &ModelGraph) -> Result<()> {
        match self.layers.iter().find(|&&l| l >= graph.layers.len()) {
            Some(l) => Err(Error::Binning(format!("layer {l} out of range"))),
            None => Ok(()),
        }
    }
}

/// Output of the layer feeding the last parametric layer (the last hidden
/// representation).
pub fn default_layers(graph: &ModelGraph) -> Result<Vec<usize>> {
    let last = *graph
        .parametric_layers()
        .last()
        .ok_or_else(|| Error::Binning("graph has no parametric layer".into()))?;
    if last == 0 {
        return Err(Error::Binning("graph has no hidden layer".into()));
    }
    Ok(vec![last - 1])
}

/// Deterministic sample of `round(fraction * N)` (at least one) inputs, in index order.
pub fn sample_inputs(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Precondition(format!(
            "sample fraction {fraction} outside (0, 1]"
        )));
    }
    if data.is_empty() {
        return Err(Error::Precondition("cannot sample an empty dataset".into()));
    }
    let n = ((fraction * data.len() as f64).round() as usize).clamp(1, data.len());
    let mut idx = index::sample(&mut rng_from(seed), data.len(), n).into_vec();
    idx.sort_unstable();
    data.subset(&idx, format!("{}-spectral", data.name), Split::Custom)
}

fn selected_activations(
    instance: &ModelInstance,
    inputs: &Matrix,
    layers: &[usize],
) -> Result<Vec<Matrix>> {
    let mut out: Vec<Matrix> = Vec::with_capacity(layers.len());
    for start in (0..inputs.rows).step_by(CHUNK) {
        let end = (start + CHUNK).min(inputs.rows);
        let trace = instance.forward_trace(&inputs.slice_rows(start, end))?;
        for (slot, &l) in layers.iter().enumerate() {
            let m = &trace.outputs[l];
            if slot == out.len() {
                out.push(Matrix::zeros(0, m.cols));
            }
            out[slot].data.extend_from_slice(&m.data);
            out[slot].rows += m.rows;
        }
    }
    Ok(out)
}

/// Percentile (linear interpolation between closest ranks) of `values`.
pub fn percentile(values: &mut [f32], pct: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f32::total_cmp);
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    let a = values[i] as f64;
    let b = values[(i + 1).min(values.len() - 1)] as f64;
    Some(a + (b - a) * frac)
}

/// Binning over `[0, hi]` with `hi` the `upper_percentile` of the originals'
/// activations on `inputs`. Falls back to `hi = 1` when all activations are 0.
pub fn calibrate_binning(
    originals: &[ModelInstance],
    inputs: &Dataset,
    layers: Vec<usize>,
    bins: usize,
    upper_percentile: f64,
) -> Result<Binning> {
    let first = originals
        .first()
        .ok_or_else(|| Error::Precondition("no original instances".into()))?;
    Binning::new(layers.clone(), bins, 0.0, 1.0)?.check_graph(&first.graph)?;
    let mut values = Vec::new();
    for inst in originals {
        for m in selected_activations(inst, &inputs.inputs, &layers)? {
            values.extend(m.data);
        }
    }
    let hi = percentile(&mut values, upper_percentile).unwrap_or(1.0);
    let hi = if hi > 0.0 && hi.is_finite() { hi } else { 1.0 };
    Binning::new(layers, bins, 0.0, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumProfile {
    pub mutant_id: String,
    pub binning: Binning,
    pub edges: Vec<f64>,
    pub instances: usize,
    /// `[inputs x bins]`, each row a probability distribution.
    pub rows: Vec<Vec<f64>>,
}

/// Spectrum of the mutant realized by `instances` on `inputs`.
///
/// Counts are accumulated as integers over all instances before
/// normalizing, so every instance carries equal weight and the result does
/// not depend on instance order.
pub fn extract_spectrum(
    mutant_id: impl Into<String>,
    instances: &[ModelInstance],
    inputs: &Dataset,
    binning: &Binning,
) -> Result<SpectrumProfile> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Precondition("spectrum needs at least one instance".into()))?;
    if inputs.is_empty() {
        return Err(Error::Precondition(
            "spectrum needs at least one input".into(),
        ));
    }
    binning.check_graph(&first.graph)?;
    let n = inputs.len();
    let counts = instances
        .par_iter()
        .map(|inst| {
            let acts = selected_activations(inst, &inputs.inputs, &binning.layers)?;
            let mut c = vec![0u64; n * binning.bins];
            for m in &acts {
                for r in 0..n {
                    for &v in m.row(r) {
                        c[r * binning.bins + binning.bin_of(v)] += 1;
                    }
                }
            }
            Ok(c)
        })
        .try_reduce(
            || vec![0u64; n * binning.bins],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let rows = counts
        .chunks(binning.bins)
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter().map(|&c| c as f64 / total as f64).collect()
        })
        .collect();
    Ok(SpectrumProfile {
        mutant_id: mutant_id.into(),
        edges: binning.edges(),
        binning: binning.clone(),
        instances: instances.len(),
        rows,
    })
}

/// Mean over inputs of `sqrt(sum_j (ln(eps + p_j) - ln(eps + q_j))^2)`.
pub fn spectral_distance(a: &SpectrumProfile, b: &SpectrumProfile) -> Result<f64> {
    if a.binning != b.binning || a.rows.len() != b.rows.len() {
        return Err(Error::Binning(format!(
            "profiles `{}` and `{}` use different binning or inputs",
            a.mutant_id, b.mutant_id
        )));
    }
    if a.rows.is_empty() {
        return Err(Error::Binning("empty profiles".into()));
    }
    let total: f64 = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(p, q)| {
            p.iter()
                .zip(q)
                .map(|(&x, &y)| {
                    let d = (LOG_EPSILON + x).ln() - (LOG_EPSILON + y).ln();
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / a.rows.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn compute(profiles: &[SpectrumProfile]) -> Result<Self> {
        let n = profiles.len();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let dists = pairs
            .par_iter()
            .map(|&(i, j)| spectral_distance(&profiles[i], &profiles[j]))
            .collect::<Result<Vec<_>>>()?;
        let mut values = vec![vec![0.0; n]; n];
        for (&(i, j), d) in pairs.iter().zip(dists) {
            values[i][j] = d;
            values[j][i] = d;
        }
        Ok(DistanceMatrix {
            labels: profiles.iter().map(|p| p.mutant_id.clone()).collect(),
            values,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub iqr: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let q = |p: f64| -> Option<f64> {
            if sorted.is_empty() {
                return None;
            }
            let pos = p * (sorted.len() - 1) as f64;
            let (i, frac) = (pos.floor() as usize, pos.fract());
            let b = sorted[(i + 1).min(sorted.len() - 1)];
            Some(sorted[i] + (b - sorted[i]) * frac)
        };
        let (q1, median, q3) = (q(0.25), q(0.5), q(0.75));
        Summary {
            n: values.len(),
            median,
            q1,
            q3,
            iqr: q1.zip(q3).map(|(a, b)| b - a),
        }
    }
}

/// Within-group and cross-group distance distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub within_a: Vec<f64>,
    pub within_b: Vec<f64>,
    pub cross: Vec<f64>,
    pub summary_within_a: Summary,
    pub summary_within_b: Summary,
    pub summary_cross: Summary,
}

impl GroupComparison {
    /// Long-format CSV: `group,distance`.
    pub fn to_csv(&self, name_a: &str, name_b: &str) -> String {
        let mut s = String::from("group,distance\n");
        let groups = [
            (format!("{name_a}-{name_a}"), &self.within_a),
            (format!("{name_b}-{name_b}"), &self.within_b),
            (format!("{name_a}-{name_b}"), &self.cross),
        ];
        for (label, values) in groups {
            for v in values {
                let _ = writeln!(s, "{label},{v}");
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path, name_a: &str, name_b: &str) -> Result<()> {
        write_atomic(path, self.to_csv(name_a, name_b).as_bytes())
    }
}

fn pairwise_within(g: &[SpectrumProfile]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            out.push(spectral_distance(&g[i], &g[j])?);
        }
    }
    Ok(out)
}

pub fn compare_groups(a: &[SpectrumProfile], b: &[SpectrumProfile]) -> Result<GroupComparison> {
    let within_a = pairwise_within(a)?;
    let within_b = pairwise_within(b)?;
    let mut cross = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            cross.push(spectral_distance(x, y)?);
        }
    }
    Ok(GroupComparison {
        summary_within_a: Summary::of(&within_a),
        summary_within_b: Summary::of(&within_b),
        summary_cross: Summary::of(&cross),
        within_a,
        within_b,
        cross,
    })
}
