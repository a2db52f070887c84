//! Network representation and deterministic batched inference.

mod format;
mod forward;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{
    load_model, load_population, save_model, ModelManifest, MANIFEST_FILE, WEIGHTS_FILE,
};
pub(crate) use forward::softmax_in_place;
pub use forward::{activate_rows, conv2d, dense, maxpool2d, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

fn one() -> usize {
    1
}

/// One layer of a feedforward graph.
///
/// Kernels follow the channels-last convention: dense `[fan_in, fan_out]`,
/// conv2d `[kh, kw, in_ch, out_ch]`. Convolutions and pooling use valid
/// padding; image tensors are laid out `[H, W, C]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        kernel_shape: [usize; 2],
        has_bias: bool,
        activation: Activation,
    },
    Conv2d {
        kernel_shape: [usize; 4],
        has_bias: bool,
        activation: Activation,
        #[serde(default = "one")]
        stride: usize,
    },
    Maxpool2d {
        pool: usize,
        stride: usize,
    },
    Flatten,
    Activation {
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        LayerSpec::Dense {
            kernel_shape: [fan_in, fan_out],
            has_bias: true,
            activation,
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// Kernel element count and bias length, for parametric layers.
    pub fn param_sizes(&self) -> Option<(usize, usize)> {
        match self {
            LayerSpec::Dense {
                kernel_shape,
                has_bias,
                ..
            } => Some((
                kernel_shape.iter().product(),
                if *has_bias { kernel_shape[1] } else { 0 },
            )),
            LayerSpec::Conv2d {
                kernel_shape,
                has_bias,
                ..
            } => Some((
                kernel_shape.iter().product(),
                if *has_bias { kernel_shape[3] } else { 0 },
            )),
            _ => None,
        }
    }

    /// Number of units (dense output columns or conv output channels).
    pub fn units(&self) -> Option<usize> {
        match self {
            LayerSpec::Dense { kernel_shape, .. } => Some(kernel_shape[1]),
            LayerSpec::Conv2d { kernel_shape, .. } => Some(kernel_shape[3]),
            _ => None,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self {
            LayerSpec::Dense { activation, .. }
            | LayerSpec::Conv2d { activation, .. }
            | LayerSpec::Activation { activation } => Some(*activation),
            _ => None,
        }
    }

    fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Error::InvalidGraph(format!("layer {index}: {msg}"));
        match self {
            LayerSpec::Dense {
                kernel_shape: [fan_in, fan_out],
                ..
            } => {
                if *fan_in == 0 || *fan_out == 0 {
                    return Err(bad("kernel_shape entries must be positive".into()));
                }
                if input != [*fan_in] {
                    return Err(bad(format!(
                        "dense expects input [{fan_in}], got {input:?}"
                    )));
                }
                Ok(vec![*fan_out])
            }
            LayerSpec::Conv2d {
                kernel_shape: [kh, kw, cin, cout],
                stride,
                activation,
                ..
            } => {
                if [*kh, *kw, *cin, *cout].contains(&0) {
                    return Err(bad("kernel_shape entries must be positive".into()));
                }
                if *stride == 0 {
                    return Err(bad("stride must be >= 1".into()));
                }
                if *activation == Activation::Softmax {
                    return Err(bad("softmax is only supported on vector outputs".into()));
                }
                let [h, w, c] = input else {
                    return Err(bad(format!(
                        "conv2d expects [H, W, C] input, got {input:?}"
                    )));
                };
                if c != cin || h < kh || w < kw {
                    return Err(bad(format!(
                        "conv2d kernel {:?} incompatible with input {input:?}",
                        [kh, kw, cin, cout]
                    )));
                }
                Ok(vec![(h - kh) / stride + 1, (w - kw) / stride + 1, *cout])
            }
            LayerSpec::Maxpool2d { pool, stride } => {
                if *pool == 0 || *stride == 0 {
                    return Err(bad("pool and stride must be >= 1".into()));
                }
                let [h, w, c] = input else {
                    return Err(bad(format!(
                        "maxpool2d expects [H, W, C] input, got {input:?}"
                    )));
                };
                if h < pool || w < pool {
                    return Err(bad(format!("pool {pool} larger than input {input:?}")));
                }
                Ok(vec![(h - pool) / stride + 1, (w - pool) / stride + 1, *c])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Activation { activation } => {
                if *activation == Activation::Softmax && input.len() != 1 {
                    return Err(bad("softmax is only supported on vector outputs".into()));
                }
                Ok(input.to_vec())
            }
        }
    }
}

/// Architecture of a feedforward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub input_shape: Vec<usize>,
    pub task: Task,
    pub layers: Vec<LayerSpec>,
}

impl ModelGraph {
    pub fn new(input_shape: Vec<usize>, task: Task, layers: Vec<LayerSpec>) -> Result<Self> {
        let graph = ModelGraph {
            input_shape,
            task,
            layers,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Fully connected network `input -> hidden... -> outputs`.
    ///
    /// Classification heads end in softmax, regression heads are linear.
    pub fn mlp(
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        hidden_activation: Activation,
        task: Task,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = inputs;
        for &h in hidden {
            layers.push(LayerSpec::dense(fan_in, h, hidden_activation));
            fan_in = h;
        }
        let head = match task {
            Task::Classification => Activation::Softmax,
            Task::Regression => Activation::Linear,
        };
        layers.push(LayerSpec::dense(fan_in, outputs, head));
        Self::new(vec![inputs], task, layers)
    }

    /// Output shape of every layer, checking adjacency along the way.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidGraph(format!(
                "input_shape {:?} must be non-empty with positive entries",
                self.input_shape
            )));
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(i, &shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.layer_shapes()?;
        let Some(last) = shapes.last() else {
            return Err(Error::InvalidGraph("graph has no layers".into()));
        };
        if last.len() != 1 {
            return Err(Error::InvalidGraph(format!(
                "final output must be a vector, got shape {last:?}"
            )));
        }
        if !self.layers.iter().any(LayerSpec::is_parametric) {
            return Err(Error::InvalidGraph("graph has no parametric layer".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.activation() == Some(Activation::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::InvalidGraph(format!(
                    "softmax must be the last layer (found at layer {i})"
                )));
            }
        }
        if self.task == Task::Classification {
            let head = self.layers.last().and_then(LayerSpec::activation);
            if !matches!(head, Some(Activation::Softmax) | Some(Activation::Linear)) {
                return Err(Error::InvalidGraph(
                    "classification graphs must end in softmax or linear".into(),
                ));
            }
            if last[0] < 2 {
                return Err(Error::InvalidGraph(
                    "classification needs at least two output classes".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.layer_shapes()
            .ok()
            .and_then(|s| s.last().map(|l| l[0]))
            .unwrap_or(0)
    }

    /// Indices of dense/conv layers, in order.
    pub fn parametric_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parametric())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Row-major `rows x cols` matrix of `f32`; a batch of flattened samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

/// Parameters of one dense or conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kernel: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

/// Where an instance came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    TrainedOriginal {
        seed: u64,
    },
    Mutant {
        source_original: Option<usize>,
        operator_config: String,
        seed: u64,
        application_index: u32,
    },
    /// Built in code or loaded from a file without provenance metadata.
    Unspecified,
}

/// One concrete weight assignment of a [`ModelGraph`].
///
/// `params` is aligned with `graph.layers`: `Some` for dense/conv layers and
/// `None` for shape-only layers. Instances are never mutated in place;
/// operators return new instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInstance {
    pub graph: Arc<ModelGraph>,
    params: Vec<Option<LayerParams>>,
    pub provenance: Provenance,
}

impl ModelInstance {
    pub fn new(
        graph: Arc<ModelGraph>,
        params: Vec<Option<LayerParams>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if params.len() != graph.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter slots for {} layers",
                params.len(),
                graph.layers.len()
            )));
        }
        for (i, (layer, p)) in graph.layers.iter().zip(&params).enumerate() {
            match (layer.param_sizes(), p) {
                (None, None) => {}
                (Some((k, b)), Some(p)) => {
                    let bias_len = p.bias.as_ref().map_or(0, Vec::len);
                    if p.kernel.len() != k || bias_len != b {
                        return Err(Error::Shape(format!(
                            "layer {i}: expected kernel {k} / bias {b}, got {} / {bias_len}",
                            p.kernel.len()
                        )));
                    }
                    if let Some(bad) = non_finite(p, i) {
                        return Err(Error::NonFinite { tensor: bad });
                    }
                }
                _ => {
                    return Err(Error::Shape(format!(
                        "layer {i}: parameter presence does not match layer kind"
                    )))
                }
            }
        }
        Ok(ModelInstance {
            graph,
            params,
            provenance,
        })
    }

    /// Instance with every parameter set to zero.
    pub fn zeros(graph: Arc<ModelGraph>) -> Self {
        let params = graph
            .layers
            .iter()
            .map(|l| {
                l.param_sizes().map(|(k, b)| LayerParams {
                    kernel: vec![0.0; k],
                    bias: (b > 0).then(|| vec![0.0; b]),
                })
            })
            .collect();
        ModelInstance {
            graph,
            params,
            provenance: Provenance::Unspecified,
        }
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn layer(&self, index: usize) -> Option<&LayerParams> {
        self.params.get(index).and_then(Option::as_ref)
    }

    /// Copy with different parameters and provenance. Shapes are checked.
    pub fn with_params(
        &self,
        params: Vec<Option<LayerParams>>,
        provenance: Provenance,
    ) -> Result<Self> {
        ModelInstance::new(self.graph.clone(), params, provenance)
    }

    /// Deconstructs into the parameter list, for building a modified copy.
    pub fn to_params(&self) -> Vec<Option<LayerParams>> {
        self.params.clone()
    }

    /// All parameters concatenated in interchange order (kernel before bias).
    pub fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for p in self.params.iter().flatten() {
            out.extend_from_slice(&p.kernel);
            if let Some(b) = &p.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        forward::forward(self, batch)
    }

    /// Forward pass keeping every layer's post-activation output.
    pub fn forward_trace(&self, batch: &Matrix) -> Result<Trace> {
        forward::forward_trace(self, batch)
    }
}

fn non_finite(p: &LayerParams, layer: usize) -> Option<String> {
    if p.kernel.iter().any(|v| !v.is_finite()) {
        return Some(format!("layer {layer} kernel"));
    }
    if p.bias
        .as_ref()
        .is_some_and(|b| b.iter().any(|v| !v.is_finite()))
    {
        return Some(format!("layer {layer} bias"));
    }
    None
}
