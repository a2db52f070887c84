//! Datasets: in-memory representation, on-disk format, builtin synthetic
//! recipes and the IDX importer.

mod idx;
mod synthetic;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{f32_from_le_bytes, f32_to_le_bytes, read_json, write_atomic, write_json};
use crate::model::{Matrix, Task};

pub use idx::{load_idx, read_idx_images, read_idx_labels};
pub use synthetic::{make_synthetic_classification, make_synthetic_regression};

pub const DATA_FILE: &str = "data.json";
pub const INPUTS_FILE: &str = "inputs.bin";
pub const LABELS_FILE: &str = "labels.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    StrongTest,
    WeakTest,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<u32>),
    /// Regression targets, one row per input.
    Targets(Matrix),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Targets(t) => t.rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Classes(c) => Labels::Classes(idx.iter().map(|&i| c[i]).collect()),
            Labels::Targets(t) => Labels::Targets(t.select_rows(idx)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub input_shape: Vec<usize>,
    pub inputs: Matrix,
    pub labels: Labels,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        input_shape: Vec<usize>,
        inputs: Matrix,
        labels: Labels,
    ) -> Result<Self> {
        let name = name.into();
        if inputs.rows == 0 {
            return Err(Error::InvalidDataset(format!("`{name}` has no inputs")));
        }
        if inputs.cols != input_shape.iter().product::<usize>() {
            return Err(Error::InvalidDataset(format!(
                "`{name}`: rows of {} values do not match input shape {input_shape:?}",
                inputs.cols
            )));
        }
        if labels.len() != inputs.rows {
            return Err(Error::InvalidDataset(format!(
                "`{name}`: {} labels for {} inputs",
                labels.len(),
                inputs.rows
            )));
        }
        if let Labels::Targets(t) = &labels {
            if t.cols == 0 {
                return Err(Error::InvalidDataset(format!(
                    "`{name}`: zero-width targets"
                )));
            }
        }
        Ok(Dataset {
            name,
            split,
            input_shape,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows == 0
    }

    pub fn task(&self) -> Task {
        match self.labels {
            Labels::Classes(_) => Task::Classification,
            Labels::Targets(_) => Task::Regression,
        }
    }

    /// Distinct class labels present, ascending. Empty for regression.
    pub fn classes(&self) -> Vec<u32> {
        match &self.labels {
            Labels::Classes(c) => {
                let mut v = c.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
            Labels::Targets(_) => Vec::new(),
        }
    }

    /// Rows `idx` (in that order) as a new dataset.
    pub fn subset(&self, idx: &[usize], name: impl Into<String>, split: Split) -> Result<Dataset> {
        Dataset::new(
            name,
            split,
            self.input_shape.clone(),
            self.inputs.select_rows(idx),
            self.labels.select(idx),
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (label_kind, target_dim, labels) = match &self.labels {
            Labels::Classes(c) => (
                LabelKind::ClassIndexU32,
                None,
                c.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
            ),
            Labels::Targets(t) => {
                let mut b = Vec::new();
                f32_to_le_bytes(&t.data, &mut b);
                (LabelKind::TargetF32, Some(t.cols), b)
            }
        };
        let meta = DatasetManifest {
            name: self.name.clone(),
            split: self.split,
            n: self.len(),
            input_shape: self.input_shape.clone(),
            dtype: "f32".into(),
            task: self.task(),
            label_kind,
            target_dim,
        };
        let mut inputs = Vec::new();
        f32_to_le_bytes(&self.inputs.data, &mut inputs);
        write_atomic(&dir.join(INPUTS_FILE), &inputs)?;
        write_atomic(&dir.join(LABELS_FILE), &labels)?;
        write_json(&dir.join(DATA_FILE), &meta)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let meta: DatasetManifest = read_json(&dir.join(DATA_FILE))?;
        if meta.dtype != "f32" {
            return Err(Error::Unsupported(format!(
                "dataset dtype `{}`",
                meta.dtype
            )));
        }
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let width: usize = meta.input_shape.iter().product();
        let raw = read(INPUTS_FILE)?;
        if raw.len() != meta.n * width * 4 {
            return Err(Error::TensorLengthMismatch {
                expected: meta.n * width * 4,
                found: raw.len(),
            });
        }
        let inputs = Matrix::from_vec(meta.n, width, f32_from_le_bytes(&raw))?;
        let raw = read(LABELS_FILE)?;
        let labels = match meta.label_kind {
            LabelKind::ClassIndexU32 => {
                if raw.len() != meta.n * 4 {
                    return Err(Error::TensorLengthMismatch {
                        expected: meta.n * 4,
                        found: raw.len(),
                    });
                }
                Labels::Classes(
                    raw.chunks_exact(4)
                        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            LabelKind::TargetF32 => {
                let d = meta.target_dim.unwrap_or(1);
                if raw.len() != meta.n * d * 4 {
                    return Err(Error::TensorLengthMismatch {
                        expected: meta.n * d * 4,
                        found: raw.len(),
                    });
                }
                Labels::Targets(Matrix::from_vec(meta.n, d, f32_from_le_bytes(&raw))?)
            }
        };
        let ds = Dataset::new(meta.name, meta.split, meta.input_shape, inputs, labels)?;
        if ds.task() != meta.task {
            return Err(Error::InvalidDataset(format!(
                "`{}`: label kind contradicts task {:?}",
                ds.name, meta.task
            )));
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LabelKind {
    ClassIndexU32,
    TargetF32,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    name: String,
    split: Split,
    n: usize,
    input_shape: Vec<usize>,
    dtype: String,
    task: Task,
    label_kind: LabelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_dim: Option<usize>,
}
