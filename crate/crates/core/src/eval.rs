//! Evaluating instances on datasets: correctness vectors and metric values.

use rayon::prelude::*;

use crate::data::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::model::{Matrix, ModelInstance};

const CHUNK: usize = 512;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Forward pass over all rows of `inputs`, in fixed-size chunks.
pub fn predict(instance: &ModelInstance, inputs: &Matrix) -> Result<Matrix> {
    let out_len = instance.graph.output_len();
    let mut out = Matrix::zeros(inputs.rows, out_len);
    for start in (0..inputs.rows).step_by(CHUNK) {
        let end = (start + CHUNK).min(inputs.rows);
        let y = instance.forward(&inputs.slice_rows(start, end))?;
        out.data[start * out_len..end * out_len].copy_from_slice(&y.data);
    }
    Ok(out)
}

/// Per-input correctness given model outputs.
///
/// Classification: argmax equals the label. Regression: the largest absolute
/// error over output dimensions is at most `tau`.
pub fn correctness_from_outputs(
    outputs: &Matrix,
    labels: &Labels,
    tau: Option<f32>,
) -> Result<Vec<bool>> {
    match labels {
        Labels::Classes(c) => Ok((0..outputs.rows)
            .map(|r| argmax(outputs.row(r)) == c[r] as usize)
            .collect()),
        Labels::Targets(t) => {
            let tau = match tau {
                Some(t) if t > 0.0 => t,
                _ => return Err(Error::MissingTolerance),
            };
            if t.cols != outputs.cols {
                return Err(Error::Shape(format!(
                    "{} outputs for {}-dimensional targets",
                    outputs.cols, t.cols
                )));
            }
            Ok((0..outputs.rows)
                .map(|r| {
                    outputs
                        .row(r)
                        .iter()
                        .zip(t.row(r))
                        .map(|(p, y)| (p - y).abs())
                        .fold(0.0f32, f32::max)
                        <= tau
                })
                .collect())
        }
    }
}

pub fn predict_correctness(
    instance: &ModelInstance,
    data: &Dataset,
    tau: Option<f32>,
) -> Result<Vec<bool>> {
    if data.task() != instance.graph.task {
        return Err(Error::Shape(format!(
            "dataset `{}` is {:?} but the model is {:?}",
            data.name,
            data.task(),
            instance.graph.task
        )));
    }
    let outputs = predict(instance, &data.inputs)?;
    correctness_from_outputs(&outputs, &data.labels, tau)
}

/// Fraction of inputs predicted correctly (accuracy or correctness rate).
pub fn metric(instance: &ModelInstance, data: &Dataset, tau: Option<f32>) -> Result<f64> {
    let c = predict_correctness(instance, data, tau)?;
    Ok(c.iter().filter(|&&b| b).count() as f64 / c.len() as f64)
}

/// [`metric`] for each instance, evaluated in parallel; order follows `instances`.
pub fn population_metrics(
    instances: &[ModelInstance],
    data: &Dataset,
    tau: Option<f32>,
) -> Result<Vec<f64>> {
    instances.par_iter().map(|m| metric(m, data, tau)).collect()
}

/// Correctness matrix `[instances x inputs]`.
pub fn correctness_matrix(
    instances: &[ModelInstance],
    data: &Dataset,
    tau: Option<f32>,
) -> Result<Vec<Vec<bool>>> {
    instances
        .par_iter()
        .map(|m| predict_correctness(m, data, tau))
        .collect()
}
