//! Minibatch SGD with momentum.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mnist::Dataset;
use super::model::{Network, NetworkShape};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// L2 penalty on weights (not biases), added to the gradient.
    pub weight_decay: f64,
    /// Use at most this many training samples (all when `None`).
    pub max_train_samples: Option<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            weight_decay: 0.0,
            max_train_samples: None,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::param("weight_decay", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMetadata {
    pub hyperparams: Option<Hyperparams>,
    pub seed: u64,
    pub train_samples: usize,
    pub epochs: Vec<EpochLog>,
    pub final_test_accuracy: Option<f64>,
}

/// Momentum SGD state: `v ← μ·v − lr·g`, `p ← p + v`.
pub struct Sgd {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Sgd {
    pub fn new(net: &Network, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let velocity = net
            .params()
            .iter()
            .map(|(w, b)| (Array2::zeros(w.dim()), Array1::zeros(b.dim())))
            .collect();
        Self {
            lr,
            momentum,
            weight_decay,
            velocity,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &[(Array2<f64>, Array1<f64>)]) {
        for (((w, b), (vw, vb)), (gw, gb)) in net
            .params_mut()
            .into_iter()
            .zip(self.velocity.iter_mut())
            .zip(grads)
        {
            let decay = self.weight_decay;
            ndarray::Zip::from(&mut *vw)
                .and(gw)
                .and(&*w)
                .for_each(|v, &g, &p| *v = self.momentum * *v - self.lr * (g + decay * p));
            vb.zip_mut_with(gb, |v, &g| *v = self.momentum * *v - self.lr * g);
            *w += &*vw;
            *b += &*vb;
        }
    }
}

/// Trains a fresh network. `on_epoch` sees each epoch's log as it finishes.
pub fn train(
    shape: NetworkShape,
    data: &Dataset,
    hp: &Hyperparams,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(Network, TrainingMetadata)> {
    hp.validate()?;
    if data.rows != shape.input_width || data.cols != shape.input_width {
        return Err(Error::Dataset(format!(
            "images are {}x{}, network expects {w}x{w}",
            data.rows,
            data.cols,
            w = shape.input_width
        )));
    }
    let n = hp
        .max_train_samples
        .map_or(data.len(), |m| m.min(data.len()));
    if n == 0 {
        return Err(Error::Dataset("no training samples".into()));
    }
    let mut net = Network::init(shape, seed)?;
    let mut opt = Sgd::new(&net, hp.learning_rate, hp.momentum, hp.weight_decay);
    let mut order: Vec<usize> = (0..n).collect();
    let mut meta = TrainingMetadata {
        hyperparams: Some(*hp),
        seed,
        train_samples: n,
        ..Default::default()
    };
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng_from(seed, &[0x5AFF1E, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, idx) in order.chunks(hp.batch_size).enumerate() {
            let x = data.batch(idx);
            let labels = data.labels_of(idx);
            let cache = net.forward_train(&x)?;
            let (loss, grad) = super::layers::softmax_cross_entropy(&cache.logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            correct += cache
                .logits
                .outer_iter()
                .zip(&labels)
                .filter(|(r, &l)| super::layers::argmax(r.view()) == l as usize)
                .count();
            loss_sum += loss * idx.len() as f64;
            let grads = net.backward(&cache, &grad);
            opt.step(&mut net, &grads);
        }
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
        };
        on_epoch(&log);
        meta.epochs.push(log);
    }
    Ok((net, meta))
}

/// Fraction of `indices` (all samples when empty) classified correctly.
pub fn evaluate(net: &Network, data: &Dataset, indices: &[usize]) -> Result<f64> {
    let all: Vec<usize>;
    let idx = if indices.is_empty() {
        all = (0..data.len()).collect();
        &all
    } else {
        indices
    };
    let mut correct = 0;
    for chunk in idx.chunks(256) {
        let pred = net.predict(&data.batch(chunk))?;
        correct += pred
            .iter()
            .zip(chunk)
            .filter(|(p, &i)| **p == data.labels[i])
            .count();
    }
    Ok(correct as f64 / idx.len() as f64)
}
