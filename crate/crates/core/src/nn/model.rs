//! Two-conv digit classifier.
//!
//! `conv(1→c1) → ReLU → pool → conv(c1→c2) → ReLU → pool → flatten →
//! dense(hidden) → ReLU → dense(classes)`. Convolutions are valid and
//! stride 1, pooling is 2×2/2 with floor.

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    argmax, im2col_batch, maxpool2, maxpool2_backward, relu, relu_backward, softmax_cross_entropy,
    Conv2d, Dense,
};
use crate::conv_math::ConvLayerSpec;
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkShape {
    pub input_width: usize,
    pub kernel_width: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            input_width: 28,
            kernel_width: 3,
            conv1_channels: 32,
            conv2_channels: 32,
            hidden: 512,
            classes: 10,
        }
    }
}

impl NetworkShape {
    pub fn conv1_spec(&self) -> Result<ConvLayerSpec> {
        ConvLayerSpec::new(1, self.conv1_channels, self.kernel_width, self.input_width)
    }

    pub fn conv2_spec(&self) -> Result<ConvLayerSpec> {
        let w = self.conv1_spec()?.out_width() / 2;
        ConvLayerSpec::new(
            self.conv1_channels,
            self.conv2_channels,
            self.kernel_width,
            w,
        )
    }

    pub fn pooled2_width(&self) -> Result<usize> {
        Ok(self.conv2_spec()?.out_width() / 2)
    }

    pub fn flat_features(&self) -> Result<usize> {
        let w = self.pooled2_width()?;
        if w == 0 {
            return Err(Error::InvalidSpec(format!(
                "input width {} leaves nothing after the second pooling",
                self.input_width
            )));
        }
        Ok(self.conv2_channels * w * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.classes < 2 {
            return Err(Error::InvalidSpec(
                "need hidden >= 1 and classes >= 2".into(),
            ));
        }
        self.flat_features().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub shape: NetworkShape,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc1: Dense,
    pub fc2: Dense,
}

/// Per-layer `(dW, db)` in forward order.
pub type Gradients = Vec<(Array2<f64>, Array1<f64>)>;

/// Activations kept for the backward pass.
pub struct ForwardCache {
    cols1: Array2<f64>,
    z1: Array4<f64>,
    pool1_idx: Vec<usize>,
    cols2: Array2<f64>,
    z2: Array4<f64>,
    pool2_idx: Vec<usize>,
    p2_dim: (usize, usize, usize, usize),
    flat: Array2<f64>,
    h1: Array2<f64>,
    a1: Array2<f64>,
    pub logits: Array2<f64>,
}

impl Network {
    /// He-normal weights, zero biases.
    pub fn init(shape: NetworkShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let c1 = shape.conv1_spec()?;
        let c2 = shape.conv2_spec()?;
        let flat = shape.flat_features()?;
        let mut net = Self {
            shape,
            conv1: Conv2d::zeros(c1),
            conv2: Conv2d::zeros(c2),
            fc1: Dense::zeros(flat, shape.hidden),
            fc2: Dense::zeros(shape.hidden, shape.classes),
        };
        for (k, (w, _)) in net.params_mut().into_iter().enumerate() {
            let fan_in = w.ncols() as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let mut rng = rng_from(seed, &[0x1417, k as u64]);
            w.mapv_inplace(|_| normal.sample(&mut rng));
        }
        Ok(net)
    }

    pub fn params(&self) -> [(&Array2<f64>, &Array1<f64>); 4] {
        [
            (&self.conv1.weights, &self.conv1.bias),
            (&self.conv2.weights, &self.conv2.bias),
            (&self.fc1.weights, &self.fc1.bias),
            (&self.fc2.weights, &self.fc2.bias),
        ]
    }

    pub fn params_mut(&mut self) -> [(&mut Array2<f64>, &mut Array1<f64>); 4] {
        [
            (&mut self.conv1.weights, &mut self.conv1.bias),
            (&mut self.conv2.weights, &mut self.conv2.bias),
            (&mut self.fc1.weights, &mut self.fc1.bias),
            (&mut self.fc2.weights, &mut self.fc2.bias),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        for (axis, expected, actual) in [
            ("channels", 1, c),
            ("rows", self.shape.input_width, h),
            ("cols", self.shape.input_width, w),
        ] {
            if expected != actual {
                return Err(Error::Dimension {
                    axis,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    pub fn forward_train(&self, x: &Array4<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let batch = x.dim().0;
        let cols1 = im2col_batch(&x.view(), self.shape.kernel_width);
        let z1 = self.conv1.forward_cols(&cols1, batch);
        let (p1, pool1_idx) = maxpool2(&relu(&z1));
        let cols2 = im2col_batch(&p1.view(), self.shape.kernel_width);
        let z2 = self.conv2.forward_cols(&cols2, batch);
        let (p2, pool2_idx) = maxpool2(&relu(&z2));
        let p2_dim = p2.dim();
        let flat = p2
            .into_shape_with_order((batch, p2_dim.1 * p2_dim.2 * p2_dim.3))
            .expect("pool output is contiguous");
        let h1 = self.fc1.forward(&flat);
        let a1 = relu(&h1);
        let logits = self.fc2.forward(&a1);
        Ok(ForwardCache {
            cols1,
            z1,
            pool1_idx,
            cols2,
            z2,
            pool2_idx,
            p2_dim,
            flat,
            h1,
            a1,
            logits,
        })
    }

    /// Backpropagates `d loss / d logits`.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Array2<f64>) -> Gradients {
        let batch = grad_logits.nrows();
        let (d_a1, dw4, db4) = self.fc2.backward(&cache.a1, grad_logits);
        let d_h1 = relu_backward(&cache.h1, &d_a1);
        let (d_flat, dw3, db3) = self.fc1.backward(&cache.flat, &d_h1);
        let d_p2 = d_flat
            .into_shape_with_order(cache.p2_dim)
            .expect("flat gradient is contiguous");
        let d_r2 = maxpool2_backward(&d_p2, &cache.pool2_idx, cache.z2.dim());
        let d_z2 = relu_backward(&cache.z2, &d_r2);
        let (d_p1, dw2, db2) = self.conv2.backward(&cache.cols2, &d_z2);
        let d_r1 = maxpool2_backward(&d_p1, &cache.pool1_idx, cache.z1.dim());
        let d_z1 = relu_backward(&cache.z1, &d_r1);
        let (_, dw1, db1) = self.conv1.backward(&cache.cols1, &d_z1);
        debug_assert_eq!(batch, cache.logits.nrows());
        vec![(dw1, db1), (dw2, db2), (dw3, db3), (dw4, db4)]
    }

    /// Mean cross-entropy loss and parameter gradients on one batch.
    pub fn loss_and_gradients(&self, x: &Array4<f64>, labels: &[u8]) -> Result<(f64, Gradients)> {
        let cache = self.forward_train(x)?;
        let (loss, grad) = softmax_cross_entropy(&cache.logits, labels);
        Ok((loss, self.backward(&cache, &grad)))
    }

    pub fn loss(&self, x: &Array4<f64>, labels: &[u8]) -> Result<f64> {
        let logits = self.logits(x)?;
        Ok(softmax_cross_entropy(&logits, labels).0)
    }

    pub fn logits(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        self.logits_with(x, &mut |_, layer, input| Ok(layer.forward(&input.view())))
    }

    /// Forward pass with the two convolutions delegated to `conv`, which
    /// receives the layer index (0 or 1), the layer and its input batch and
    /// must return the pre-activation output including bias.
    pub fn logits_with(
        &self,
        x: &Array4<f64>,
        conv: &mut dyn FnMut(usize, &Conv2d, &Array4<f64>) -> Result<Array4<f64>>,
    ) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let batch = x.dim().0;
        let z1 = conv(0, &self.conv1, x)?;
        let (p1, _) = maxpool2(&relu(&z1));
        let z2 = conv(1, &self.conv2, &p1)?;
        let (p2, _) = maxpool2(&relu(&z2));
        let features = p2.len() / batch.max(1);
        let flat = p2
            .into_shape_with_order((batch, features))
            .expect("pool output is contiguous");
        let a1 = relu(&self.fc1.forward(&flat));
        Ok(self.fc2.forward(&a1))
    }

    pub fn predict(&self, x: &Array4<f64>) -> Result<Vec<u8>> {
        let logits = self.logits(x)?;
        Ok(logits.outer_iter().map(|r| argmax(r) as u8).collect())
    }

    /// Adds `bias[v]` to channel `v` of a single-sample conv output.
    pub(crate) fn add_bias(out: &mut Array3<f64>, bias: &Array1<f64>) {
        for (mut plane, &b) in out.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            plane += b;
        }
    }
}
