use crate::error::{Error, Result};

use super::{Activation, LayerSpec, Matrix, ModelInstance};

/// Post-activation output of every layer for one batch.
#[derive(Debug, Clone)]
pub struct Trace {
    pub outputs: Vec<Matrix>,
}

/// `x · kernel + bias` for a row-major `[fan_in, fan_out]` kernel.
pub fn dense(x: &Matrix, kernel: &[f32], bias: Option<&[f32]>, fan_out: usize) -> Matrix {
    let fan_in = x.cols;
    debug_assert_eq!(kernel.len(), fan_in * fan_out);
    let mut out = Matrix::zeros(x.rows, fan_out);
    for r in 0..x.rows {
        let xr = x.row(r);
        let or = out.row_mut(r);
        if let Some(b) = bias {
            or.copy_from_slice(b);
        }
        for (i, &xi) in xr.iter().enumerate() {
            let wr = &kernel[i * fan_out..(i + 1) * fan_out];
            for (o, &w) in or.iter_mut().zip(wr) {
                *o += xi * w;
            }
        }
    }
    out
}

/// Valid-padding 2-D convolution over `[H, W, C]` rows.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &Matrix,
    in_shape: [usize; 3],
    kernel: &[f32],
    bias: Option<&[f32]>,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
) -> Matrix {
    let [h, w, cin] = in_shape;
    let ho = (h - kh) / stride + 1;
    let wo = (w - kw) / stride + 1;
    let mut out = Matrix::zeros(x.rows, ho * wo * cout);
    for r in 0..x.rows {
        let xr = x.row(r);
        let or = out.row_mut(r);
        for oy in 0..ho {
            for ox in 0..wo {
                let dst = &mut or[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                if let Some(b) = bias {
                    dst.copy_from_slice(b);
                }
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = oy * stride + ky;
                        let ix = ox * stride + kx;
                        let src = &xr[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                        for (ci, &xv) in src.iter().enumerate() {
                            let base = ((ky * kw + kx) * cin + ci) * cout;
                            for (d, &k) in dst.iter_mut().zip(&kernel[base..base + cout]) {
                                *d += xv * k;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Max pooling over `[H, W, C]` rows. Also returns, for each output element,
/// the flat input index that won (first maximum on ties).
pub fn maxpool2d(
    x: &Matrix,
    in_shape: [usize; 3],
    pool: usize,
    stride: usize,
) -> (Matrix, Vec<usize>) {
    let [h, w, c] = in_shape;
    let ho = (h - pool) / stride + 1;
    let wo = (w - pool) / stride + 1;
    let cols = ho * wo * c;
    let mut out = Matrix::zeros(x.rows, cols);
    let mut argmax = vec![0usize; x.rows * cols];
    for r in 0..x.rows {
        let xr = x.row(r);
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0;
                    for py in 0..pool {
                        for px in 0..pool {
                            let i = ((oy * stride + py) * w + ox * stride + px) * c + ch;
                            if xr[i] > best || (py == 0 && px == 0) {
                                best = xr[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (oy * wo + ox) * c + ch;
                    out.data[r * cols + o] = best;
                    argmax[r * cols + o] = best_i;
                }
            }
        }
    }
    (out, argmax)
}

/// Apply an activation in place, row by row (softmax is per row).
pub fn activate_rows(m: &mut Matrix, act: Activation) {
    match act {
        Activation::Linear => {}
        Activation::Relu => m.data.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Sigmoid => m
            .data
            .iter_mut()
            .for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
        Activation::Tanh => m.data.iter_mut().for_each(|v| *v = v.tanh()),
        Activation::Softmax => {
            for r in 0..m.rows {
                softmax_in_place(m.row_mut(r));
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Applies layer `index` of `instance` to a batch whose rows have shape `in_shape`.
pub(crate) fn apply_layer(
    instance: &ModelInstance,
    index: usize,
    in_shape: &[usize],
    x: &Matrix,
) -> Matrix {
    let layer = &instance.graph.layers[index];
    let params = instance.layer(index);
    match layer {
        LayerSpec::Dense {
            kernel_shape,
            activation,
            ..
        } => {
            let p = params.expect("dense layer has parameters");
            let mut out = dense(x, &p.kernel, p.bias.as_deref(), kernel_shape[1]);
            activate_rows(&mut out, *activation);
            out
        }
        LayerSpec::Conv2d {
            kernel_shape: [kh, kw, _, cout],
            activation,
            stride,
            ..
        } => {
            let p = params.expect("conv layer has parameters");
            let mut out = conv2d(
                x,
                [in_shape[0], in_shape[1], in_shape[2]],
                &p.kernel,
                p.bias.as_deref(),
                *kh,
                *kw,
                *cout,
                *stride,
            );
            activate_rows(&mut out, *activation);
            out
        }
        LayerSpec::Maxpool2d { pool, stride } => {
            maxpool2d(x, [in_shape[0], in_shape[1], in_shape[2]], *pool, *stride).0
        }
        LayerSpec::Flatten => x.clone(),
        LayerSpec::Activation { activation } => {
            let mut out = x.clone();
            activate_rows(&mut out, *activation);
            out
        }
    }
}

fn check_batch(instance: &ModelInstance, batch: &Matrix) -> Result<Vec<Vec<usize>>> {
    let input_len = instance.graph.input_len();
    if batch.cols != input_len || batch.rows == 0 {
        return Err(Error::Shape(format!(
            "batch of {}x{} does not match input shape {:?}",
            batch.rows, batch.cols, instance.graph.input_shape
        )));
    }
    instance.graph.layer_shapes()
}

pub(crate) fn forward(instance: &ModelInstance, batch: &Matrix) -> Result<Matrix> {
    let shapes = check_batch(instance, batch)?;
    let mut in_shape = instance.graph.input_shape.clone();
    let mut x = batch.clone();
    for (i, shape) in shapes.into_iter().enumerate() {
        x = apply_layer(instance, i, &in_shape, &x);
        in_shape = shape;
    }
    Ok(x)
}

pub(crate) fn forward_trace(instance: &ModelInstance, batch: &Matrix) -> Result<Trace> {
    let shapes = check_batch(instance, batch)?;
    let mut in_shape = instance.graph.input_shape.clone();
    let mut outputs: Vec<Matrix> = Vec::with_capacity(shapes.len());
    for (i, shape) in shapes.into_iter().enumerate() {
        let x = outputs.last().unwrap_or(batch);
        let y = apply_layer(instance, i, &in_shape, x);
        outputs.push(y);
        in_shape = shape;
    }
    Ok(Trace { outputs })
}
