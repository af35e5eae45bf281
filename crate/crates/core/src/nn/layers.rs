//! Batched layers with hand-written backward passes.
//!
//! Activations are `[batch][channel][row][col]` for spatial layers and
//! `[batch][feature]` for dense ones. Convolutions lower to GeMM through a
//! batched im2col whose row order matches [`crate::conv_math::weight_matrix`].

use ndarray::{Array1, Array2, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::conv_math::{kernels_from_matrix, ConvLayerSpec, KernelTensor};
use crate::error::Result;

/// Valid, stride-1 convolution. Weights are the `c_out × (c_in·σ²)` GeMM matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub spec: ConvLayerSpec,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    pub fn zeros(spec: ConvLayerSpec) -> Self {
        Self {
            spec,
            weights: Array2::zeros((spec.c_out, spec.rows())),
            bias: Array1::zeros(spec.c_out),
        }
    }

    pub fn kernels(&self) -> Result<KernelTensor> {
        kernels_from_matrix(&self.weights, &self.spec)
    }

    pub fn forward(&self, x: &ArrayView4<f64>) -> Array4<f64> {
        let cols = im2col_batch(x, self.spec.sigma);
        self.forward_cols(&cols, x.dim().0)
    }

    /// Forward from precomputed im2col columns.
    pub fn forward_cols(&self, cols: &Array2<f64>, batch: usize) -> Array4<f64> {
        let ow = self.spec.out_width();
        let mut out = self.weights.dot(cols);
        for (mut row, &b) in out.outer_iter_mut().zip(self.bias.iter()) {
            row += b;
        }
        channel_major_to_batch(out, batch, ow)
    }

    /// Returns `(dx, dW, db)`.
    pub fn backward(
        &self,
        cols: &Array2<f64>,
        grad_out: &Array4<f64>,
    ) -> (Array4<f64>, Array2<f64>, Array1<f64>) {
        let (batch, c_out, oh, ow) = grad_out.dim();
        let dy = grad_out
            .view()
            .into_shape_with_order((batch, c_out, oh * ow))
            .expect("contiguous gradient")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c_out, batch * oh * ow))
            .expect("standard layout");
        let d_weights = dy.dot(&cols.t());
        let d_bias = dy.sum_axis(Axis(1));
        let d_cols = self.weights.t().dot(&dy);
        let dx = col2im_batch(
            &d_cols,
            batch,
            self.spec.c_in,
            self.spec.image_width,
            self.spec.sigma,
        );
        (dx, d_weights, d_bias)
    }
}

/// `[c_out][batch·P]` → `[batch][c_out][ow][ow]`.
pub(crate) fn channel_major_to_batch(out: Array2<f64>, batch: usize, ow: usize) -> Array4<f64> {
    let c_out = out.nrows();
    out.into_shape_with_order((c_out, batch, ow * ow))
        .expect("gemm output is contiguous")
        .permuted_axes([1, 0, 2])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((batch, c_out, ow, ow))
        .expect("standard layout")
}

/// Columns `[c_in·σ²][batch·P]`, sample-major within each row.
pub fn im2col_batch(x: &ArrayView4<f64>, sigma: usize) -> Array2<f64> {
    let x = x.as_standard_layout();
    let (batch, c_in, width, _) = x.dim();
    let ow = width - sigma + 1;
    let patches = ow * ow;
    let q_count = sigma * sigma;
    let src = x.as_slice().expect("standard layout");
    let mut cols = Array2::<f64>::zeros((c_in * q_count, batch * patches));
    let dst = cols.as_slice_mut().expect("fresh array");
    let row_len = batch * patches;
    for u in 0..c_in {
        for i in 0..sigma {
            for j in 0..sigma {
                let row = u * q_count + i * sigma + j;
                let row_dst = &mut dst[row * row_len..(row + 1) * row_len];
                for b in 0..batch {
                    let img = (b * c_in + u) * width * width;
                    for m in 0..ow {
                        let from = img + (m + i) * width + j;
                        let to = b * patches + m * ow;
                        row_dst[to..to + ow].copy_from_slice(&src[from..from + ow]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col_batch`].
pub fn col2im_batch(
    cols: &Array2<f64>,
    batch: usize,
    c_in: usize,
    width: usize,
    sigma: usize,
) -> Array4<f64> {
    let ow = width - sigma + 1;
    let patches = ow * ow;
    let q_count = sigma * sigma;
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((batch, c_in, width, width));
    let dst = out.as_slice_mut().expect("fresh array");
    let row_len = batch * patches;
    for u in 0..c_in {
        for i in 0..sigma {
            for j in 0..sigma {
                let row = u * q_count + i * sigma + j;
                let row_src = &src[row * row_len..(row + 1) * row_len];
                for b in 0..batch {
                    let img = (b * c_in + u) * width * width;
                    for m in 0..ow {
                        let to = img + (m + i) * width + j;
                        let from = b * patches + m * ow;
                        for (d, s) in dst[to..to + ow].iter_mut().zip(&row_src[from..from + ow]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Fully-connected layer, weights `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    pub fn backward(
        &self,
        x: &Array2<f64>,
        grad_out: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        (
            grad_out.dot(&self.weights),
            grad_out.t().dot(x),
            grad_out.sum_axis(Axis(0)),
        )
    }
}

pub fn relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given its *input*.
pub fn relu_backward<D: ndarray::Dimension>(
    input: &ndarray::Array<f64, D>,
    grad_out: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut g = grad_out.clone();
    ndarray::Zip::from(&mut g).and(input).for_each(|g, &x| {
        if x <= 0.0 {
            *g = 0.0
        }
    });
    g
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn maxpool2(x: &Array4<f64>) -> (Array4<f64>, Vec<usize>) {
    let (b, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((b, c, oh, ow));
    let mut argmax = vec![0usize; b * c * oh * ow];
    for (k, (o, a)) in out.iter_mut().zip(argmax.iter_mut()).enumerate() {
        let n = k % ow;
        let m = (k / ow) % oh;
        let plane = k / (ow * oh);
        let base = plane * h * w;
        let mut best = base + 2 * m * w + 2 * n;
        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
            let idx = base + (2 * m + di) * w + 2 * n + dj;
            if src[idx] > src[best] {
                best = idx;
            }
        }
        *o = src[best];
        *a = best;
    }
    (out, argmax)
}

pub fn maxpool2_backward(
    grad_out: &Array4<f64>,
    argmax: &[usize],
    input_dim: (usize, usize, usize, usize),
) -> Array4<f64> {
    let mut dx = Array4::<f64>::zeros(input_dim);
    let dst = dx.as_slice_mut().expect("fresh array");
    for (&g, &idx) in grad_out.iter().zip(argmax) {
        dst[idx] += g;
    }
    dx
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[u8]) -> (f64, Array2<f64>) {
    let batch = logits.nrows();
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (k, (row, mut g)) in logits.outer_iter().zip(grad.outer_iter_mut()).enumerate() {
        let peak = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exp: Array1<f64> = row.mapv(|v| (v - peak).exp());
        let z = exp.sum();
        let label = labels[k] as usize;
        loss -= (exp[label] / z).ln();
        g.assign(&(exp / z));
        g[label] -= 1.0;
    }
    grad /= batch as f64;
    (loss / batch as f64, grad)
}

pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}
