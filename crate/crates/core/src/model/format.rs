//! Interchange format: a directory holding `manifest.json` (graph + dtype +
//! provenance) and `weights.bin` (every parametric layer's kernel then bias,
//! in layer order, as row-major little-endian `f32`, no header or padding).

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{f32_from_le_bytes, f32_to_le_bytes, read_json, write_atomic, write_json};

use super::{LayerParams, LayerSpec, ModelGraph, ModelInstance, Provenance, Task};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

fn f32_tag() -> String {
    "f32".to_string()
}

fn unspecified() -> Provenance {
    Provenance::Unspecified
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    #[serde(default = "f32_tag")]
    pub dtype: String,
    pub input_shape: Vec<usize>,
    pub task: Task,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "unspecified")]
    pub provenance: Provenance,
}

pub fn save_model(instance: &ModelInstance, dir: &Path) -> Result<()> {
    let manifest = ModelManifest {
        dtype: f32_tag(),
        input_shape: instance.graph.input_shape.clone(),
        task: instance.graph.task,
        layers: instance.graph.layers.clone(),
        provenance: instance.provenance.clone(),
    };
    let mut blob = Vec::new();
    for p in instance.params().iter().flatten() {
        f32_to_le_bytes(&p.kernel, &mut blob);
        if let Some(b) = &p.bias {
            f32_to_le_bytes(b, &mut blob);
        }
    }
    write_atomic(&dir.join(WEIGHTS_FILE), &blob)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn load_model(dir: &Path) -> Result<ModelInstance> {
    let manifest: ModelManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let graph = Arc::new(ModelGraph::new(
        manifest.input_shape,
        manifest.task,
        manifest.layers,
    )?);
    load_model_with_graph(dir, graph, manifest.dtype, manifest.provenance)
}

fn load_model_with_graph(
    dir: &Path,
    graph: Arc<ModelGraph>,
    dtype: String,
    provenance: Provenance,
) -> Result<ModelInstance> {
    if dtype != "f32" {
        return Err(Error::Unsupported(format!("dtype `{dtype}` (only f32)")));
    }
    let path = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected: usize = graph
        .layers
        .iter()
        .filter_map(LayerSpec::param_sizes)
        .map(|(k, b)| (k + b) * 4)
        .sum();
    if blob.len() != expected {
        return Err(Error::TensorLengthMismatch {
            expected,
            found: blob.len(),
        });
    }
    let values = f32_from_le_bytes(&blob);
    let mut cursor = 0;
    let mut take = |n: usize| {
        let out = values[cursor..cursor + n].to_vec();
        cursor += n;
        out
    };
    let params = graph
        .layers
        .iter()
        .map(|l| {
            l.param_sizes().map(|(k, b)| LayerParams {
                kernel: take(k),
                bias: (b > 0).then(|| take(b)),
            })
        })
        .collect();
    ModelInstance::new(graph, params, provenance)
}

/// Load several instances that must share one graph; the graph is parsed once
/// and shared between them.
pub fn load_population(dirs: &[impl AsRef<Path>]) -> Result<Vec<ModelInstance>> {
    let mut out: Vec<ModelInstance> = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let m = load_model(dir.as_ref())?;
        if let Some(first) = out.first() {
            if *first.graph != *m.graph {
                return Err(Error::InvalidGraph(format!(
                    "{} does not share the population's graph",
                    dir.as_ref().display()
                )));
            }
            let shared = first.graph.clone();
            out.push(ModelInstance::new(shared, m.to_params(), m.provenance)?);
        } else {
            out.push(m);
        }
    }
    Ok(out)
}
