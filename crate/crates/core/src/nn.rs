//! From-scratch neural-network stack: dense/conv layers, batch norm,
//! max pooling, softmax, backpropagation, and Adam.
//!
//! Tensors are row-major f64 with the batch as the leading dimension;
//! images are NHWC. Convolutions are valid-padding stride 1; pooling
//! strides by its window size and drops remainders.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} wants {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }
}

/// One layer with its weights. Weight layouts: Conv2d `w[ky][kx][ic][oc]`,
/// Conv1d `w[k][ic][oc]`, Dense `w[in][out]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Layer {
    Conv2d {
        kh: usize,
        kw: usize,
        in_c: usize,
        out_c: usize,
        w: Vec<f64>,
        b: Vec<f64>,
    },
    Conv1d {
        k: usize,
        in_c: usize,
        out_c: usize,
        w: Vec<f64>,
        b: Vec<f64>,
    },
    MaxPool2d {
        size: usize,
    },
    MaxPool1d {
        size: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
        w: Vec<f64>,
        b: Vec<f64>,
    },
    BatchNorm {
        dim: usize,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        momentum: f64,
        eps: f64,
    },
    Relu,
    Softmax,
    Flatten,
    /// Per-sample target shape (batch dimension excluded).
    Reshape {
        shape: Vec<usize>,
    },
}

pub enum LayerCache {
    Input(Tensor),
    Pool {
        in_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mask(Vec<bool>),
    Probs(Tensor),
    Shape(Vec<usize>),
    None,
}

/// Gradient arrays aligned with [`Layer::params`].
pub type LayerGrads = Vec<Vec<f64>>;

impl Layer {
    pub fn params(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Conv2d { w, b, .. } | Layer::Conv1d { w, b, .. } | Layer::Dense { w, b, .. } => {
                vec![w, b]
            }
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv2d { w, b, .. } | Layer::Conv1d { w, b, .. } | Layer::Dense { w, b, .. } => {
                vec![w, b]
            }
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(Error::Shape(msg));
        match self {
            Layer::Conv2d {
                kh, kw, in_c, out_c, ..
            } => {
                if in_shape.len() != 4 || in_shape[3] != *in_c {
                    return bad(format!("Conv2d expects [B,H,W,{in_c}], got {in_shape:?}"));
                }
                let (h, w) = (in_shape[1], in_shape[2]);
                if h < *kh || w < *kw {
                    return bad(format!("Conv2d kernel {kh}x{kw} larger than input {h}x{w}"));
                }
                Ok(vec![in_shape[0], h - kh + 1, w - kw + 1, *out_c])
            }
            Layer::Conv1d { k, in_c, out_c, .. } => {
                if in_shape.len() != 3 || in_shape[2] != *in_c {
                    return bad(format!("Conv1d expects [B,L,{in_c}], got {in_shape:?}"));
                }
                if in_shape[1] < *k {
                    return bad("Conv1d kernel larger than input".into());
                }
                Ok(vec![in_shape[0], in_shape[1] - k + 1, *out_c])
            }
            Layer::MaxPool2d { size } => {
                if in_shape.len() != 4 {
                    return bad(format!("MaxPool2d expects NHWC, got {in_shape:?}"));
                }
                Ok(vec![
                    in_shape[0],
                    in_shape[1] / size,
                    in_shape[2] / size,
                    in_shape[3],
                ])
            }
            Layer::MaxPool1d { size } => {
                if in_shape.len() != 3 {
                    return bad(format!("MaxPool1d expects [B,L,C], got {in_shape:?}"));
                }
                Ok(vec![in_shape[0], in_shape[1] / size, in_shape[2]])
            }
            Layer::Dense { in_dim, out_dim, .. } => {
                if in_shape.len() != 2 || in_shape[1] != *in_dim {
                    return bad(format!("Dense expects [B,{in_dim}], got {in_shape:?}"));
                }
                Ok(vec![in_shape[0], *out_dim])
            }
            Layer::BatchNorm { dim, .. } => {
                if in_shape.len() != 2 || in_shape[1] != *dim {
                    return bad(format!("BatchNorm expects [B,{dim}], got {in_shape:?}"));
                }
                Ok(in_shape.to_vec())
            }
            Layer::Relu | Layer::Softmax => Ok(in_shape.to_vec()),
            Layer::Flatten => Ok(vec![in_shape[0], in_shape[1..].iter().product()]),
            Layer::Reshape { shape } => {
                let want: usize = shape.iter().product();
                let have: usize = in_shape[1..].iter().product();
                if want != have {
                    return bad(format!("Reshape to {shape:?} from {in_shape:?}"));
                }
                let mut out = vec![in_shape[0]];
                out.extend_from_slice(shape);
                Ok(out)
            }
        }
    }

    /// Forward pass. `training` selects batch statistics (and running-stat
    /// updates) in BatchNorm; inference callers should use
    /// [`NetworkModel::infer`], which never mutates.
    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<(Tensor, LayerCache)> {
        let out_shape = self.out_shape(&x.shape)?;
        match self {
            Layer::Conv2d {
                kh, kw, in_c, out_c, w, b,
            } => {
                let y = conv2d_forward(x, &out_shape, *kh, *kw, *in_c, *out_c, w, b);
                Ok((y, LayerCache::Input(x.clone())))
            }
            Layer::Conv1d { k, in_c, out_c, w, b } => {
                let y = conv1d_forward(x, &out_shape, *k, *in_c, *out_c, w, b);
                Ok((y, LayerCache::Input(x.clone())))
            }
            Layer::MaxPool2d { size } => {
                let (y, argmax) = maxpool2d_forward(x, &out_shape, *size);
                Ok((
                    y,
                    LayerCache::Pool {
                        in_shape: x.shape.clone(),
                        argmax,
                    },
                ))
            }
            Layer::MaxPool1d { size } => {
                let (y, argmax) = maxpool1d_forward(x, &out_shape, *size);
                Ok((
                    y,
                    LayerCache::Pool {
                        in_shape: x.shape.clone(),
                        argmax,
                    },
                ))
            }
            Layer::Dense { in_dim, out_dim, w, b } => {
                let y = dense_forward(x, *in_dim, *out_dim, w, b);
                Ok((y, LayerCache::Input(x.clone())))
            }
            Layer::BatchNorm {
                dim,
                gamma,
                beta,
                running_mean,
                running_var,
                momentum,
                eps,
            } => {
                let bsz = x.shape[0];
                let d = *dim;
                if training {
                    let mut mean = vec![0.0; d];
                    let mut var = vec![0.0; d];
                    for bi in 0..bsz {
                        for f in 0..d {
                            mean[f] += x.data[bi * d + f];
                        }
                    }
                    for m in &mut mean {
                        *m /= bsz as f64;
                    }
                    for bi in 0..bsz {
                        for f in 0..d {
                            let c = x.data[bi * d + f] - mean[f];
                            var[f] += c * c;
                        }
                    }
                    for v in &mut var {
                        *v /= bsz as f64;
                    }
                    for f in 0..d {
                        running_mean[f] = *momentum * running_mean[f] + (1.0 - *momentum) * mean[f];
                        running_var[f] = *momentum * running_var[f] + (1.0 - *momentum) * var[f];
                    }
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + *eps).sqrt()).collect();
                    let mut xhat = vec![0.0; bsz * d];
                    let mut y = Tensor::zeros(&out_shape);
                    for bi in 0..bsz {
                        for f in 0..d {
                            let h = (x.data[bi * d + f] - mean[f]) * inv_std[f];
                            xhat[bi * d + f] = h;
                            y.data[bi * d + f] = gamma[f] * h + beta[f];
                        }
                    }
                    Ok((y, LayerCache::BatchNorm { xhat, inv_std }))
                } else {
                    let y = batchnorm_infer(x, d, gamma, beta, running_mean, running_var, *eps);
                    Ok((y, LayerCache::None))
                }
            }
            Layer::Relu => {
                let mut y = x.clone();
                let mask: Vec<bool> = y
                    .data
                    .iter_mut()
                    .map(|v| {
                        if *v > 0.0 {
                            true
                        } else {
                            *v = 0.0;
                            false
                        }
                    })
                    .collect();
                Ok((y, LayerCache::Mask(mask)))
            }
            Layer::Softmax => {
                let y = softmax_forward(x);
                Ok((y.clone(), LayerCache::Probs(y)))
            }
            Layer::Flatten | Layer::Reshape { .. } => {
                let y = Tensor {
                    shape: out_shape,
                    data: x.data.clone(),
                };
                Ok((y, LayerCache::Shape(x.shape.clone())))
            }
        }
    }

    /// Inference forward: immutable, BatchNorm uses running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.out_shape(&x.shape)?;
        match self {
            Layer::Conv2d {
                kh, kw, in_c, out_c, w, b,
            } => Ok(conv2d_forward(x, &out_shape, *kh, *kw, *in_c, *out_c, w, b)),
            Layer::Conv1d { k, in_c, out_c, w, b } => {
                Ok(conv1d_forward(x, &out_shape, *k, *in_c, *out_c, w, b))
            }
            Layer::MaxPool2d { size } => Ok(maxpool2d_forward(x, &out_shape, *size).0),
            Layer::MaxPool1d { size } => Ok(maxpool1d_forward(x, &out_shape, *size).0),
            Layer::Dense { in_dim, out_dim, w, b } => Ok(dense_forward(x, *in_dim, *out_dim, w, b)),
            Layer::BatchNorm {
                dim,
                gamma,
                beta,
                running_mean,
                running_var,
                eps,
                ..
            } => Ok(batchnorm_infer(x, *dim, gamma, beta, running_mean, running_var, *eps)),
            Layer::Relu => {
                let mut y = x.clone();
                for v in &mut y.data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                Ok(y)
            }
            Layer::Softmax => Ok(softmax_forward(x)),
            Layer::Flatten | Layer::Reshape { .. } => Ok(Tensor {
                shape: out_shape,
                data: x.data.clone(),
            }),
        }
    }

    /// Backward pass: gradient w.r.t. the input plus parameter gradients
    /// aligned with [`Layer::params`].
    pub fn backward(&self, cache: &LayerCache, dy: &Tensor) -> (Tensor, LayerGrads) {
        match (self, cache) {
            (
                Layer::Conv2d {
                    kh, kw, in_c, out_c, w, ..
                },
                LayerCache::Input(x),
            ) => conv2d_backward(x, dy, *kh, *kw, *in_c, *out_c, w),
            (Layer::Conv1d { k, in_c, out_c, w, .. }, LayerCache::Input(x)) => {
                conv1d_backward(x, dy, *k, *in_c, *out_c, w)
            }
            (Layer::MaxPool2d { .. } | Layer::MaxPool1d { .. }, LayerCache::Pool { in_shape, argmax }) => {
                let mut dx = Tensor::zeros(in_shape);
                for (o, &src) in argmax.iter().enumerate() {
                    dx.data[src] += dy.data[o];
                }
                (dx, vec![])
            }
            (Layer::Dense { in_dim, out_dim, w, .. }, LayerCache::Input(x)) => {
                dense_backward(x, dy, *in_dim, *out_dim, w)
            }
            (
                Layer::BatchNorm { dim, gamma, .. },
                LayerCache::BatchNorm { xhat, inv_std },
            ) => {
                let d = *dim;
                let bsz = dy.shape[0];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for bi in 0..bsz {
                    for f in 0..d {
                        dgamma[f] += dy.data[bi * d + f] * xhat[bi * d + f];
                        dbeta[f] += dy.data[bi * d + f];
                    }
                }
                let mut dx = Tensor::zeros(&dy.shape);
                let nb = bsz as f64;
                for bi in 0..bsz {
                    for f in 0..d {
                        dx.data[bi * d + f] = gamma[f] * inv_std[f]
                            * (dy.data[bi * d + f]
                                - dbeta[f] / nb
                                - xhat[bi * d + f] * dgamma[f] / nb);
                    }
                }
                (dx, vec![dgamma, dbeta])
            }
            (Layer::Relu, LayerCache::Mask(mask)) => {
                let mut dx = dy.clone();
                for (v, &m) in dx.data.iter_mut().zip(mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
                (dx, vec![])
            }
            (Layer::Softmax, LayerCache::Probs(y)) => {
                // dX = y ⊙ (dY − Σ_k dY_k·y_k) per row
                let k = y.shape[1];
                let mut dx = Tensor::zeros(&dy.shape);
                for bi in 0..y.shape[0] {
                    let row = &y.data[bi * k..(bi + 1) * k];
                    let g = &dy.data[bi * k..(bi + 1) * k];
                    let dot: f64 = row.iter().zip(g).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dx.data[bi * k + j] = row[j] * (g[j] - dot);
                    }
                }
                (dx, vec![])
            }
            (Layer::Flatten | Layer::Reshape { .. }, LayerCache::Shape(in_shape)) => (
                Tensor {
                    shape: in_shape.clone(),
                    data: dy.data.clone(),
                },
                vec![],
            ),
            _ => panic!("layer/cache mismatch in backward"),
        }
    }
}

fn conv2d_forward(
    x: &Tensor,
    out_shape: &[usize],
    kh: usize,
    kw: usize,
    in_c: usize,
    out_c: usize,
    w: &[f64],
    b: &[f64],
) -> Tensor {
    let (bsz, ih, iw) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut y = Tensor::zeros(out_shape);
    for bi in 0..bsz {
        let x_img = &x.data[bi * ih * iw * in_c..(bi + 1) * ih * iw * in_c];
        let y_img = &mut y.data[bi * oh * ow * out_c..(bi + 1) * oh * ow * out_c];
        for oy in 0..oh {
            for ox in 0..ow {
                let out_base = (oy * ow + ox) * out_c;
                y_img[out_base..out_base + out_c].copy_from_slice(b);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let in_base = ((oy + ky) * iw + (ox + kx)) * in_c;
                        let w_row = (ky * kw + kx) * in_c;
                        for ic in 0..in_c {
                            let xv = x_img[in_base + ic];
                            let w_base = (w_row + ic) * out_c;
                            for oc in 0..out_c {
                                y_img[out_base + oc] += xv * w[w_base + oc];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn conv2d_backward(
    x: &Tensor,
    dy: &Tensor,
    kh: usize,
    kw: usize,
    in_c: usize,
    out_c: usize,
    w: &[f64],
) -> (Tensor, LayerGrads) {
    let (bsz, ih, iw) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (dy.shape[1], dy.shape[2]);
    let mut dx = Tensor::zeros(&x.shape);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; out_c];
    for bi in 0..bsz {
        let x_img = &x.data[bi * ih * iw * in_c..(bi + 1) * ih * iw * in_c];
        let dy_img = &dy.data[bi * oh * ow * out_c..(bi + 1) * oh * ow * out_c];
        let dx_img = &mut dx.data[bi * ih * iw * in_c..(bi + 1) * ih * iw * in_c];
        for oy in 0..oh {
            for ox in 0..ow {
                let out_base = (oy * ow + ox) * out_c;
                for oc in 0..out_c {
                    db[oc] += dy_img[out_base + oc];
                }
                for ky in 0..kh {
                    for kx in 0..kw {
                        let in_base = ((oy + ky) * iw + (ox + kx)) * in_c;
                        let w_row = (ky * kw + kx) * in_c;
                        for ic in 0..in_c {
                            let xv = x_img[in_base + ic];
                            let w_base = (w_row + ic) * out_c;
                            let mut acc = 0.0;
                            for oc in 0..out_c {
                                let g = dy_img[out_base + oc];
                                dw[w_base + oc] += xv * g;
                                acc += w[w_base + oc] * g;
                            }
                            dx_img[in_base + ic] += acc;
                        }
                    }
                }
            }
        }
    }
    (dx, vec![dw, db])
}

fn conv1d_forward(
    x: &Tensor,
    out_shape: &[usize],
    k: usize,
    in_c: usize,
    out_c: usize,
    w: &[f64],
    b: &[f64],
) -> Tensor {
    let (bsz, il) = (x.shape[0], x.shape[1]);
    let ol = out_shape[1];
    let mut y = Tensor::zeros(out_shape);
    for bi in 0..bsz {
        let x_row = &x.data[bi * il * in_c..(bi + 1) * il * in_c];
        let y_row = &mut y.data[bi * ol * out_c..(bi + 1) * ol * out_c];
        for o in 0..ol {
            let out_base = o * out_c;
            y_row[out_base..out_base + out_c].copy_from_slice(b);
            for kk in 0..k {
                for ic in 0..in_c {
                    let xv = x_row[(o + kk) * in_c + ic];
                    let w_base = (kk * in_c + ic) * out_c;
                    for oc in 0..out_c {
                        y_row[out_base + oc] += xv * w[w_base + oc];
                    }
                }
            }
        }
    }
    y
}

fn conv1d_backward(
    x: &Tensor,
    dy: &Tensor,
    k: usize,
    in_c: usize,
    out_c: usize,
    w: &[f64],
) -> (Tensor, LayerGrads) {
    let (bsz, il) = (x.shape[0], x.shape[1]);
    let ol = dy.shape[1];
    let mut dx = Tensor::zeros(&x.shape);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; out_c];
    for bi in 0..bsz {
        let x_row = &x.data[bi * il * in_c..(bi + 1) * il * in_c];
        let dy_row = &dy.data[bi * ol * out_c..(bi + 1) * ol * out_c];
        let dx_row = &mut dx.data[bi * il * in_c..(bi + 1) * il * in_c];
        for o in 0..ol {
            let out_base = o * out_c;
            for oc in 0..out_c {
                db[oc] += dy_row[out_base + oc];
            }
            for kk in 0..k {
                for ic in 0..in_c {
                    let xv = x_row[(o + kk) * in_c + ic];
                    let w_base = (kk * in_c + ic) * out_c;
                    let mut acc = 0.0;
                    for oc in 0..out_c {
                        let g = dy_row[out_base + oc];
                        dw[w_base + oc] += xv * g;
                        acc += w[w_base + oc] * g;
                    }
                    dx_row[(o + kk) * in_c + ic] += acc;
                }
            }
        }
    }
    (dx, vec![dw, db])
}

fn maxpool2d_forward(x: &Tensor, out_shape: &[usize], size: usize) -> (Tensor, Vec<usize>) {
    let (bsz, ih, iw, c) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut y = Tensor::zeros(out_shape);
    let mut argmax = vec![0usize; y.data.len()];
    for bi in 0..bsz {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for py in 0..size {
                        for px in 0..size {
                            let iy = oy * size + py;
                            let ix = ox * size + px;
                            let idx = ((bi * ih + iy) * iw + ix) * c + ch;
                            if x.data[idx] > best {
                                best = x.data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let out_idx = ((bi * oh + oy) * ow + ox) * c + ch;
                    y.data[out_idx] = best;
                    argmax[out_idx] = best_idx;
                }
            }
        }
    }
    (y, argmax)
}

fn maxpool1d_forward(x: &Tensor, out_shape: &[usize], size: usize) -> (Tensor, Vec<usize>) {
    let (bsz, il, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let ol = out_shape[1];
    let mut y = Tensor::zeros(out_shape);
    let mut argmax = vec![0usize; y.data.len()];
    for bi in 0..bsz {
        for o in 0..ol {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for p in 0..size {
                    let idx = (bi * il + o * size + p) * c + ch;
                    if x.data[idx] > best {
                        best = x.data[idx];
                        best_idx = idx;
                    }
                }
                let out_idx = (bi * ol + o) * c + ch;
                y.data[out_idx] = best;
                argmax[out_idx] = best_idx;
            }
        }
    }
    (y, argmax)
}

fn dense_forward(x: &Tensor, in_dim: usize, out_dim: usize, w: &[f64], b: &[f64]) -> Tensor {
    let bsz = x.shape[0];
    let mut y = Tensor::zeros(&[bsz, out_dim]);
    for bi in 0..bsz {
        let x_row = &x.data[bi * in_dim..(bi + 1) * in_dim];
        let y_row = &mut y.data[bi * out_dim..(bi + 1) * out_dim];
        y_row.copy_from_slice(b);
        for (i, &xv) in x_row.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let w_row = &w[i * out_dim..(i + 1) * out_dim];
            for (o, wv) in w_row.iter().enumerate() {
                y_row[o] += xv * wv;
            }
        }
    }
    y
}

fn dense_backward(
    x: &Tensor,
    dy: &Tensor,
    in_dim: usize,
    out_dim: usize,
    w: &[f64],
) -> (Tensor, LayerGrads) {
    let bsz = x.shape[0];
    let mut dx = Tensor::zeros(&x.shape);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; out_dim];
    for bi in 0..bsz {
        let x_row = &x.data[bi * in_dim..(bi + 1) * in_dim];
        let g_row = &dy.data[bi * out_dim..(bi + 1) * out_dim];
        for (o, &g) in g_row.iter().enumerate() {
            db[o] += g;
        }
        let dx_row = &mut dx.data[bi * in_dim..(bi + 1) * in_dim];
        for (i, &xv) in x_row.iter().enumerate() {
            let w_row = &w[i * out_dim..(i + 1) * out_dim];
            let dw_row = &mut dw[i * out_dim..(i + 1) * out_dim];
            let mut acc = 0.0;
            for (o, &g) in g_row.iter().enumerate() {
                dw_row[o] += xv * g;
                acc += w_row[o] * g;
            }
            dx_row[i] = acc;
        }
    }
    (dx, vec![dw, db])
}

fn batchnorm_infer(
    x: &Tensor,
    d: usize,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Tensor {
    let mut y = Tensor::zeros(&x.shape);
    for bi in 0..x.shape[0] {
        for f in 0..d {
            let inv = 1.0 / (var[f] + eps).sqrt();
            y.data[bi * d + f] = gamma[f] * (x.data[bi * d + f] - mean[f]) * inv + beta[f];
        }
    }
    y
}

fn softmax_forward(x: &Tensor) -> Tensor {
    let k = x.shape[1];
    let mut y = Tensor::zeros(&x.shape);
    for bi in 0..x.shape[0] {
        let row = &x.data[bi * k..(bi + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            y.data[bi * k + j] = e;
            sum += e;
        }
        for j in 0..k {
            y.data[bi * k + j] /= sum;
        }
    }
    y
}

/// Mean cross-entropy −Σ y·log p over the batch, probabilities clamped to
/// [1e-10, 1].
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> f64 {
    let k = probs.shape[1];
    let mut loss = 0.0;
    for (bi, &lab) in labels.iter().enumerate() {
        let p = probs.data[bi * k + lab].clamp(1e-10, 1.0);
        loss -= p.ln();
    }
    loss / labels.len() as f64
}

pub fn accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    let k = probs.shape[1];
    let mut correct = 0usize;
    for (bi, &lab) in labels.iter().enumerate() {
        let row = &probs.data[bi * k..(bi + 1) * k];
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if pred == lab {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam on a flat parameter vector.
#[derive(Clone, Debug, Default)]
pub struct AdamVec {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamVec {
    pub fn new(dim: usize) -> AdamVec {
        AdamVec {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grads[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// An ordered layer stack with per-layer freeze flags and Adam state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkModel {
    pub layers: Vec<Layer>,
    pub trainable: Vec<bool>,
    /// Index one past the feature-extraction layer, when the model
    /// exposes an intermediate tap.
    pub feature_tap: Option<usize>,
    #[serde(skip)]
    adam: AdamState,
}

impl NetworkModel {
    pub fn new(layers: Vec<Layer>) -> NetworkModel {
        let trainable = vec![true; layers.len()];
        NetworkModel {
            layers,
            trainable,
            feature_tap: None,
            adam: AdamState::default(),
        }
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(l, _)| l.param_count())
            .sum()
    }

    pub fn total_param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, cache) = layer.forward(&cur, true)?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, caches))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.infer_to(x, self.layers.len())
    }

    /// Apply layers `[0, upto)` in inference mode.
    pub fn infer_to(&self, x: &Tensor, upto: usize) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers[..upto] {
            cur = layer.infer(&cur)?;
        }
        Ok(cur)
    }

    /// Backprop of mean cross-entropy from softmax probabilities. Uses the
    /// fused softmax+cross-entropy gradient (p − y)/B at the logits; the
    /// final layer must be Softmax. Frozen layers get empty gradients.
    pub fn backward(
        &self,
        caches: &[LayerCache],
        probs: &Tensor,
        labels: &[usize],
    ) -> Result<Vec<LayerGrads>> {
        let last = self.layers.len() - 1;
        if !matches!(self.layers[last], Layer::Softmax) {
            return Err(Error::Shape("backward expects a Softmax final layer".into()));
        }
        let k = probs.shape[1];
        let bsz = probs.shape[0];
        let mut grad = Tensor::zeros(&probs.shape);
        let nb = bsz as f64;
        for bi in 0..bsz {
            for j in 0..k {
                let y = if labels[bi] == j { 1.0 } else { 0.0 };
                grad.data[bi * k + j] = (probs.data[bi * k + j] - y) / nb;
            }
        }
        let mut out: Vec<LayerGrads> = vec![vec![]; self.layers.len()];
        for (idx, layer) in self.layers.iter().enumerate().take(last).rev() {
            let (dx, grads) = layer.backward(&caches[idx], &grad);
            if self.trainable[idx] {
                out[idx] = grads;
            }
            grad = dx;
        }
        Ok(out)
    }

    /// Standard bias-corrected Adam update on all unfrozen layers.
    pub fn adam_step(&mut self, grads: &[LayerGrads], lr: f64) {
        if self.adam.m.is_empty() {
            for layer in &self.layers {
                for p in layer.params() {
                    self.adam.m.push(vec![0.0; p.len()]);
                    self.adam.v.push(vec![0.0; p.len()]);
                }
            }
        }
        self.adam.t += 1;
        let t = self.adam.t as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let mut slot = 0;
        for (li, layer) in self.layers.iter_mut().enumerate() {
            let params = layer.params_mut();
            let frozen = !self.trainable[li];
            for (pi, p) in params.into_iter().enumerate() {
                if frozen || grads[li].is_empty() {
                    slot += 1;
                    continue;
                }
                let g = &grads[li][pi];
                let m = &mut self.adam.m[slot];
                let v = &mut self.adam.v[slot];
                for i in 0..p.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
                }
                slot += 1;
            }
        }
    }
}

/// Glorot-uniform initialization: U(−a, a) with a = √(6/(fan_in+fan_out)).
pub fn glorot_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, count: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count).map(|_| rng.random_range(-limit..limit)).collect()
}
