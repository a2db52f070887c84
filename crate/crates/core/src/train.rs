//! Minimal SGD trainer used to manufacture populations of original models.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::model::{
    activate_rows, conv2d, dense, maxpool2d, Activation, LayerParams, LayerSpec, Matrix,
    ModelGraph, ModelInstance, Provenance,
};
use crate::rng::rng_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    Mse,
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub loss: Loss,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            optimizer: Optimizer::SgdMomentum,
            loss: Loss::CrossEntropy,
            momentum: default_momentum(),
        }
    }
}

impl TrainingConfig {
    /// `epochs = 0` is accepted and yields the untrained initialisation.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `m` independently seeded instances of one architecture.
#[derive(Debug, Clone)]
pub struct OriginalPopulation {
    pub graph: Arc<ModelGraph>,
    pub instances: Vec<ModelInstance>,
    pub seeds: Vec<u64>,
    /// `None` when assembled from externally trained files.
    pub training: Option<TrainingConfig>,
}

impl OriginalPopulation {
    /// Assemble from already-built instances (e.g. loaded from disk).
    pub fn from_instances(instances: Vec<ModelInstance>, seeds: Vec<u64>) -> Result<Self> {
        if instances.len() < 2 {
            return Err(Error::Config("m >= 2 required".into()));
        }
        if seeds.len() != instances.len() {
            return Err(Error::Config("one seed per instance required".into()));
        }
        let graph = instances[0].graph.clone();
        if instances.iter().any(|m| *m.graph != *graph) {
            return Err(Error::InvalidGraph(
                "population instances differ in graph".into(),
            ));
        }
        Ok(OriginalPopulation {
            graph,
            instances,
            seeds,
            training: None,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Glorot-uniform kernels, zero biases.
pub fn init_instance(graph: Arc<ModelGraph>, seed: u64) -> ModelInstance {
    let mut rng = rng_stream(seed, 0);
    let params = graph
        .layers
        .iter()
        .map(|l| {
            let (fan_in, fan_out) = match l {
                LayerSpec::Dense { kernel_shape, .. } => (kernel_shape[0], kernel_shape[1]),
                LayerSpec::Conv2d {
                    kernel_shape: [kh, kw, ci, co],
                    ..
                } => (kh * kw * ci, kh * kw * co),
                _ => return None,
            };
            let (k, b) = l.param_sizes().expect("parametric");
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let kernel = (0..k)
                .map(|_| rng.random_range(-limit..limit) as f32)
                .collect();
            Some(LayerParams {
                kernel,
                bias: (b > 0).then(|| vec![0.0; b]),
            })
        })
        .collect();
    ModelInstance::new(graph, params, Provenance::TrainedOriginal { seed })
        .expect("initialised shapes match the graph")
}

/// Train `m` instances with seeds `base_seed + i`, in parallel.
pub fn train_population(
    graph: Arc<ModelGraph>,
    train: &Dataset,
    cfg: &TrainingConfig,
    m: usize,
    base_seed: u64,
) -> Result<OriginalPopulation> {
    if m < 2 {
        return Err(Error::Config("m >= 2 required".into()));
    }
    cfg.validate()?;
    let seeds: Vec<u64> = (0..m as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let instances = seeds
        .par_iter()
        .map(|&seed| train_instance(graph.clone(), train, cfg, seed).map(|(inst, _)| inst))
        .collect::<Result<Vec<_>>>()?;
    Ok(OriginalPopulation {
        graph,
        instances,
        seeds,
        training: Some(cfg.clone()),
    })
}

/// Train one instance from seed `seed`; returns it with the mean loss of each
/// epoch. A non-finite loss triggers one retry at a tenth of the learning rate.
pub fn train_instance(
    graph: Arc<ModelGraph>,
    train: &Dataset,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<(ModelInstance, Vec<f64>)> {
    cfg.validate()?;
    match run_training(graph.clone(), train, cfg, seed)? {
        Some(done) => Ok(done),
        None => {
            let retry = TrainingConfig {
                learning_rate: cfg.learning_rate / 10.0,
                ..cfg.clone()
            };
            run_training(graph, train, &retry, seed)?.ok_or(Error::Divergence { seed })
        }
    }
}

fn run_training(
    graph: Arc<ModelGraph>,
    train: &Dataset,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<Option<(ModelInstance, Vec<f64>)>> {
    if train.input_shape != graph.input_shape || train.task() != graph.task {
        return Err(Error::InvalidDataset(format!(
            "`{}` does not fit the graph's input shape or task",
            train.name
        )));
    }
    let mut net = Net::new(init_instance(graph.clone(), seed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng_stream(seed, 1);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train.inputs.select_rows(batch);
            let loss = net.step(&x, &train.labels, batch, cfg)?;
            if !loss.is_finite() {
                return Ok(None);
            }
            total += loss * batch.len() as f64;
        }
        let epoch_loss = total / train.len() as f64;
        if !epoch_loss.is_finite() {
            return Ok(None);
        }
        losses.push(epoch_loss);
    }
    let params = net.params;
    if params.iter().flatten().any(|p| {
        p.kernel
            .iter()
            .chain(p.bias.iter().flatten())
            .any(|v| !v.is_finite())
    }) {
        return Ok(None);
    }
    let inst = ModelInstance::new(graph, params, Provenance::TrainedOriginal { seed })?;
    Ok(Some((inst, losses)))
}

/// Mutable training state: parameters plus momentum buffers.
struct Net {
    graph: Arc<ModelGraph>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Option<LayerParams>>,
    velocity: Vec<Option<LayerParams>>,
}

struct Cache {
    inputs: Vec<Matrix>,
    outputs: Vec<Matrix>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl Net {
    fn new(instance: ModelInstance) -> Self {
        let graph = instance.graph.clone();
        let shapes = graph.layer_shapes().expect("validated graph");
        let params = instance.to_params();
        let velocity = params
            .iter()
            .map(|p| {
                p.as_ref().map(|p| LayerParams {
                    kernel: vec![0.0; p.kernel.len()],
                    bias: p.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
            })
            .collect();
        Net {
            graph,
            shapes,
            params,
            velocity,
        }
    }

    fn in_shape(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.graph.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }

    fn forward(&self, x: &Matrix) -> Cache {
        let n = self.graph.layers.len();
        let mut cache = Cache {
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            argmax: Vec::with_capacity(n),
        };
        let mut cur = x.clone();
        for (i, layer) in self.graph.layers.iter().enumerate() {
            let s = self.in_shape(i);
            let mut arg = None;
            let y = match layer {
                LayerSpec::Dense {
                    kernel_shape,
                    activation,
                    ..
                } => {
                    let p = self.params[i].as_ref().expect("dense params");
                    let mut y = dense(&cur, &p.kernel, p.bias.as_deref(), kernel_shape[1]);
                    activate_rows(&mut y, *activation);
                    y
                }
                LayerSpec::Conv2d {
                    kernel_shape: [kh, kw, _, co],
                    activation,
                    stride,
                    ..
                } => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let mut y = conv2d(
                        &cur,
                        [s[0], s[1], s[2]],
                        &p.kernel,
                        p.bias.as_deref(),
                        *kh,
                        *kw,
                        *co,
                        *stride,
                    );
                    activate_rows(&mut y, *activation);
                    y
                }
                LayerSpec::Maxpool2d { pool, stride } => {
                    let (y, a) = maxpool2d(&cur, [s[0], s[1], s[2]], *pool, *stride);
                    arg = Some(a);
                    y
                }
                LayerSpec::Flatten => cur.clone(),
                LayerSpec::Activation { activation } => {
                    let mut y = cur.clone();
                    activate_rows(&mut y, *activation);
                    y
                }
            };
            cache.inputs.push(cur);
            cache.argmax.push(arg);
            cur = y.clone();
            cache.outputs.push(y);
        }
        cache
    }

    /// One SGD step on a minibatch; returns the minibatch loss.
    fn step(
        &mut self,
        x: &Matrix,
        labels: &Labels,
        idx: &[usize],
        cfg: &TrainingConfig,
    ) -> Result<f64> {
        let cache = self.forward(x);
        let out = cache.outputs.last().expect("non-empty graph");
        let b = x.rows as f32;
        let head = self.graph.layers.last().and_then(LayerSpec::activation);
        // Gradient w.r.t. the final layer's output, or w.r.t. its
        // pre-activation when the head is a softmax folded into the loss.
        let (mut grad, mut pre, loss) = match (cfg.loss, labels) {
            (Loss::CrossEntropy, Labels::Classes(c)) => {
                let mut probs = out.clone();
                if head != Some(Activation::Softmax) {
                    activate_rows(&mut probs, Activation::Softmax);
                }
                let mut loss = 0.0f64;
                for (r, &i) in idx.iter().enumerate() {
                    let label = c[i] as usize;
                    if label >= probs.cols {
                        return Err(Error::InvalidDataset(format!("label {label} out of range")));
                    }
                    let row = probs.row_mut(r);
                    loss -= (row[label].max(1e-12) as f64).ln();
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v /= b);
                }
                (
                    probs,
                    head == Some(Activation::Softmax),
                    loss / x.rows as f64,
                )
            }
            (Loss::Mse, Labels::Targets(t)) => {
                if head == Some(Activation::Softmax) {
                    return Err(Error::Unsupported("mse loss with a softmax head".into()));
                }
                let mut g = out.clone();
                let d = out.cols as f32;
                let mut loss = 0.0f64;
                for (r, &i) in idx.iter().enumerate() {
                    for (v, &y) in g.row_mut(r).iter_mut().zip(t.row(i)) {
                        let e = *v - y;
                        loss += (e * e) as f64;
                        *v = 2.0 * e / (b * d);
                    }
                }
                (g, false, loss / (x.rows as f64 * out.cols as f64))
            }
            _ => {
                return Err(Error::Unsupported(
                    "loss does not match the label kind".into(),
                ))
            }
        };

        let lr = cfg.learning_rate as f32;
        let mu = match cfg.optimizer {
            Optimizer::Sgd => 0.0,
            Optimizer::SgdMomentum => cfg.momentum as f32,
        };
        for i in (0..self.graph.layers.len()).rev() {
            let layer = self.graph.layers[i].clone();
            let need_input_grad = i > 0;
            match layer {
                LayerSpec::Dense {
                    kernel_shape: [fi, fo],
                    activation,
                    ..
                } => {
                    if !pre {
                        apply_derivative(&mut grad, &cache.outputs[i], activation)?;
                    }
                    let xin = &cache.inputs[i];
                    let mut dw = vec![0.0f32; fi * fo];
                    let mut db = vec![0.0f32; fo];
                    for r in 0..xin.rows {
                        let g = grad.row(r);
                        for (bj, &gj) in db.iter_mut().zip(g) {
                            *bj += gj;
                        }
                        for (ii, &xv) in xin.row(r).iter().enumerate() {
                            for (w, &gj) in dw[ii * fo..(ii + 1) * fo].iter_mut().zip(g) {
                                *w += xv * gj;
                            }
                        }
                    }
                    let next = need_input_grad.then(|| {
                        let k = &self.params[i].as_ref().expect("dense params").kernel;
                        let mut dx = Matrix::zeros(xin.rows, fi);
                        for r in 0..xin.rows {
                            let g = grad.row(r);
                            for (ii, d) in dx.row_mut(r).iter_mut().enumerate() {
                                *d = k[ii * fo..(ii + 1) * fo]
                                    .iter()
                                    .zip(g)
                                    .map(|(w, gj)| w * gj)
                                    .sum();
                            }
                        }
                        dx
                    });
                    self.update(i, &dw, &db, lr, mu);
                    if let Some(dx) = next {
                        grad = dx;
                    }
                }
                LayerSpec::Conv2d {
                    kernel_shape: [kh, kw, ci, co],
                    activation,
                    stride,
                    ..
                } => {
                    if !pre {
                        apply_derivative(&mut grad, &cache.outputs[i], activation)?;
                    }
                    let s = self.in_shape(i).to_vec();
                    let (h, w) = (s[0], s[1]);
                    let ho = (h - kh) / stride + 1;
                    let wo = (w - kw) / stride + 1;
                    let xin = &cache.inputs[i];
                    let k = self.params[i].as_ref().expect("conv params").kernel.clone();
                    let mut dw = vec![0.0f32; kh * kw * ci * co];
                    let mut db = vec![0.0f32; co];
                    let mut dx = Matrix::zeros(xin.rows, h * w * ci);
                    for r in 0..xin.rows {
                        let xr = xin.row(r);
                        let g = grad.row(r);
                        let dxr = dx.row_mut(r);
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let go = &g[(oy * wo + ox) * co..(oy * wo + ox + 1) * co];
                                for (bj, &gj) in db.iter_mut().zip(go) {
                                    *bj += gj;
                                }
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let base_in =
                                            ((oy * stride + ky) * w + ox * stride + kx) * ci;
                                        for c in 0..ci {
                                            let base_k = ((ky * kw + kx) * ci + c) * co;
                                            let xv = xr[base_in + c];
                                            let mut acc = 0.0f32;
                                            for o in 0..co {
                                                dw[base_k + o] += xv * go[o];
                                                acc += k[base_k + o] * go[o];
                                            }
                                            dxr[base_in + c] += acc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.update(i, &dw, &db, lr, mu);
                    grad = dx;
                }
                LayerSpec::Maxpool2d { .. } => {
                    let arg = cache.argmax[i].as_ref().expect("pool argmax");
                    let xin = &cache.inputs[i];
                    let mut dx = Matrix::zeros(xin.rows, xin.cols);
                    for r in 0..grad.rows {
                        for (o, &gv) in grad.row(r).iter().enumerate() {
                            dx.data[r * xin.cols + arg[r * grad.cols + o]] += gv;
                        }
                    }
                    grad = dx;
                }
                LayerSpec::Flatten => {}
                LayerSpec::Activation { activation } => {
                    if !pre {
                        apply_derivative(&mut grad, &cache.outputs[i], activation)?;
                    }
                }
            }
            pre = false;
        }
        Ok(loss)
    }

    fn update(&mut self, i: usize, dw: &[f32], db: &[f32], lr: f32, mu: f32) {
        let p = self.params[i].as_mut().expect("params");
        let v = self.velocity[i].as_mut().expect("velocity");
        for ((w, vel), g) in p.kernel.iter_mut().zip(v.kernel.iter_mut()).zip(dw) {
            *vel = mu * *vel - lr * g;
            *w += *vel;
        }
        if let (Some(b), Some(vb)) = (p.bias.as_mut(), v.bias.as_mut()) {
            for ((w, vel), g) in b.iter_mut().zip(vb.iter_mut()).zip(db) {
                *vel = mu * *vel - lr * g;
                *w += *vel;
            }
        }
    }
}

/// Multiply `grad` (w.r.t. post-activation output `y`) by the activation's
/// derivative expressed through `y`.
fn apply_derivative(grad: &mut Matrix, y: &Matrix, act: Activation) -> Result<()> {
    match act {
        Activation::Linear => {}
        Activation::Relu => grad.data.iter_mut().zip(&y.data).for_each(|(g, &y)| {
            if y <= 0.0 {
                *g = 0.0
            }
        }),
        Activation::Sigmoid => grad
            .data
            .iter_mut()
            .zip(&y.data)
            .for_each(|(g, &y)| *g *= y * (1.0 - y)),
        Activation::Tanh => grad
            .data
            .iter_mut()
            .zip(&y.data)
            .for_each(|(g, &y)| *g *= 1.0 - y * y),
        Activation::Softmax => {
            return Err(Error::Unsupported(
                "softmax is only trainable as the cross-entropy head".into(),
            ))
        }
    }
    Ok(())
}
