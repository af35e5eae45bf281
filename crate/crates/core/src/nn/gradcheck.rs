//! Analytic gradients against central finite differences.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    im2col_batch, maxpool2, maxpool2_backward, relu, relu_backward, softmax_cross_entropy, Conv2d,
    Dense,
};
use super::model::{Network, NetworkShape};
use crate::conv_math::ConvLayerSpec;
use crate::error::Result;
use crate::rng::{rng_from, SimRng};

pub const STEP: f64 = 1e-5;
/// Denominator floor so gradients that are zero up to round-off do not
/// produce spurious relative errors.
const FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.entries
            .iter()
            .fold(0.0, |m, e| m.max(e.max_relative_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares `analytic[k]` with `(f(x + h e_k) − f(x − h e_k)) / 2h` for every k.
fn compare(
    name: &str,
    values: &mut [f64],
    analytic: &[f64],
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> GradCheckEntry {
    let mut worst: f64 = 0.0;
    for k in 0..values.len() {
        let orig = values[k];
        values[k] = orig + STEP;
        let plus = f(values);
        values[k] = orig - STEP;
        let minus = f(values);
        values[k] = orig;
        worst = worst.max(relative_error(analytic[k], (plus - minus) / (2.0 * STEP)));
    }
    GradCheckEntry {
        name: name.into(),
        checked: values.len(),
        max_relative_error: worst,
    }
}

fn uniform4(rng: &mut SimRng, dim: (usize, usize, usize, usize), lo: f64, hi: f64) -> Array4<f64> {
    Array4::from_shape_fn(dim, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero so ReLU kinks are not straddled.
fn signed_away_from_zero(rng: &mut SimRng) -> f64 {
    let m = rng.random_range(0.1..1.0);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

/// Checks every layer type in isolation plus the full network on
/// small random shapes.
pub fn check_all(seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng_from(seed, &[0x6C]);
    let mut entries = Vec::new();

    // Convolution: input, weights and bias under a random linear readout.
    let spec = ConvLayerSpec::new(2, 3, 3, 6)?;
    let mut conv = Conv2d::zeros(spec);
    conv.weights.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    conv.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    let x = uniform4(&mut rng, (2, 2, 6, 6), 0.0, 1.0);
    let proj = uniform4(&mut rng, (2, 3, 4, 4), -1.0, 1.0);
    let cols = im2col_batch(&x.view(), 3);
    let (dx, dw, db) = conv.backward(&cols, &proj);
    let readout = |y: &Array4<f64>| (y * &proj).sum();
    {
        let mut xv = x.clone().into_raw_vec_and_offset().0;
        entries.push(compare(
            "conv input",
            &mut xv,
            dx.as_slice().unwrap(),
            &mut |v| {
                let xi = Array4::from_shape_vec(x.dim(), v.to_vec()).unwrap();
                readout(&conv.forward(&xi.view()))
            },
        ));
        let mut wv = conv.weights.clone().into_raw_vec_and_offset().0;
        entries.push(compare(
            "conv weights",
            &mut wv,
            dw.as_slice().unwrap(),
            &mut |v| {
                let mut c = conv.clone();
                c.weights = Array2::from_shape_vec(conv.weights.dim(), v.to_vec()).unwrap();
                readout(&c.forward(&x.view()))
            },
        ));
        let mut bv = conv.bias.to_vec();
        entries.push(compare(
            "conv bias",
            &mut bv,
            db.as_slice().unwrap(),
            &mut |v| {
                let mut c = conv.clone();
                c.bias = Array1::from(v.to_vec());
                readout(&c.forward(&x.view()))
            },
        ));
    }

    // Dense.
    let mut dense = Dense::zeros(5, 4);
    dense.weights.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    dense.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    let xd = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
    let pd = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
    let (dxd, dwd, dbd) = dense.backward(&xd, &pd);
    {
        let mut xv = xd.clone().into_raw_vec_and_offset().0;
        entries.push(compare(
            "dense input",
            &mut xv,
            dxd.as_slice().unwrap(),
            &mut |v| {
                let xi = Array2::from_shape_vec(xd.dim(), v.to_vec()).unwrap();
                (dense.forward(&xi) * &pd).sum()
            },
        ));
        let mut wv = dense.weights.clone().into_raw_vec_and_offset().0;
        entries.push(compare(
            "dense weights",
            &mut wv,
            dwd.as_slice().unwrap(),
            &mut |v| {
                let mut d = dense.clone();
                d.weights = Array2::from_shape_vec(dense.weights.dim(), v.to_vec()).unwrap();
                (d.forward(&xd) * &pd).sum()
            },
        ));
        let mut bv = dense.bias.to_vec();
        entries.push(compare(
            "dense bias",
            &mut bv,
            dbd.as_slice().unwrap(),
            &mut |v| {
                let mut d = dense.clone();
                d.bias = Array1::from(v.to_vec());
                (d.forward(&xd) * &pd).sum()
            },
        ));
    }

    // ReLU.
    let xr = Array4::from_shape_fn((2, 2, 3, 3), |_| signed_away_from_zero(&mut rng));
    let pr = uniform4(&mut rng, (2, 2, 3, 3), -1.0, 1.0);
    let dxr = relu_backward(&xr, &pr);
    let mut xv = xr.clone().into_raw_vec_and_offset().0;
    entries.push(compare(
        "relu",
        &mut xv,
        dxr.as_slice().unwrap(),
        &mut |v| {
            let xi = Array4::from_shape_vec(xr.dim(), v.to_vec()).unwrap();
            (relu(&xi) * &pr).sum()
        },
    ));

    // Max pooling on an odd-sized input, with distinct values.
    let xp = uniform4(&mut rng, (2, 2, 5, 5), -1.0, 1.0);
    let (yp, idx) = maxpool2(&xp);
    let pp = uniform4(&mut rng, yp.dim(), -1.0, 1.0);
    let dxp = maxpool2_backward(&pp, &idx, xp.dim());
    let mut xv = xp.clone().into_raw_vec_and_offset().0;
    entries.push(compare(
        "maxpool",
        &mut xv,
        dxp.as_slice().unwrap(),
        &mut |v| {
            let xi = Array4::from_shape_vec(xp.dim(), v.to_vec()).unwrap();
            (maxpool2(&xi).0 * &pp).sum()
        },
    ));

    // Softmax cross-entropy.
    let logits = Array2::from_shape_fn((4, 5), |_| rng.random_range(-3.0..3.0));
    let labels: Vec<u8> = (0..4).map(|_| rng.random_range(0..5u8)).collect();
    let (_, dl) = softmax_cross_entropy(&logits, &labels);
    let mut lv = logits.clone().into_raw_vec_and_offset().0;
    entries.push(compare(
        "softmax cross-entropy",
        &mut lv,
        dl.as_slice().unwrap(),
        &mut |v| {
            let li = Array2::from_shape_vec(logits.dim(), v.to_vec()).unwrap();
            softmax_cross_entropy(&li, &labels).0
        },
    ));

    entries.extend(check_network(seed)?.entries);
    Ok(GradCheckReport { entries })
}

/// Every parameter of a two-channel toy network under the training loss.
pub fn check_network(seed: u64) -> Result<GradCheckReport> {
    let shape = NetworkShape {
        input_width: 10,
        kernel_width: 3,
        conv1_channels: 2,
        conv2_channels: 2,
        hidden: 5,
        classes: 3,
    };
    let mut net = Network::init(shape, seed)?;
    let mut rng = rng_from(seed, &[0x6C, 1]);
    for (_, b) in net.params_mut() {
        b.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    let x = uniform4(&mut rng, (3, 1, 10, 10), 0.0, 1.0);
    let labels: Vec<u8> = (0..3).map(|_| rng.random_range(0..3u8)).collect();
    let (_, grads) = net.loss_and_gradients(&x, &labels)?;
    let names = ["conv1", "conv2", "fc1", "fc2"];
    let mut entries = Vec::new();
    for (k, (gw, gb)) in grads.iter().enumerate() {
        let mut wv = net.params()[k].0.clone().into_raw_vec_and_offset().0;
        let wdim = gw.dim();
        entries.push(compare(
            &format!("network {} weights", names[k]),
            &mut wv,
            gw.as_slice().unwrap(),
            &mut |v| {
                let mut n = net.clone();
                *n.params_mut()[k].0 = Array2::from_shape_vec(wdim, v.to_vec()).unwrap();
                n.loss(&x, &labels).unwrap()
            },
        ));
        let mut bv = net.params()[k].1.to_vec();
        entries.push(compare(
            &format!("network {} bias", names[k]),
            &mut bv,
            gb.as_slice().unwrap(),
            &mut |v| {
                let mut n = net.clone();
                *n.params_mut()[k].1 = Array1::from(v.to_vec());
                n.loss(&x, &labels).unwrap()
            },
        ));
    }
    Ok(GradCheckReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_layers_within_tolerance() {
        let r = check_all(3).unwrap();
        for e in &r.entries {
            assert!(e.max_relative_error < 1e-4, "{e:?}");
            assert!(e.checked > 0);
        }
    }
}
