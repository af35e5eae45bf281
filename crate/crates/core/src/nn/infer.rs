//! Digital and hybrid (photonic conv, digital rest) inference and sweeps.
//!
//! In hybrid mode each conv input is scaled by its per-sample maximum before
//! it is modulated, so the brightest pixel drives the modulator at full
//! scale, and the detected result is scaled back digitally. Conv biases are
//! added digitally. Every sample draws its detection noise from its own
//! stream derived from `(seed, sample index)`, so results do not depend on
//! the subset order or thread count.

use ndarray::{Array3, Array4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::argmax;
use super::mnist::Dataset;
use super::model::Network;
use crate::error::{Error, Result};
use crate::photonic::{
    apply_calibration, calibrate, program_weights, AnalogFaultModel, PhotonicConvLayer,
};
use crate::rng::{derive_seed, rng_from};
use crate::stats::{mean, std_dev, BoxStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultConfig {
    /// Detection noise in dBc; `None` disables it.
    pub neop_dbc: Option<f64>,
    pub imbalance_db: f64,
    pub calibration: bool,
    /// Probes averaged per path when calibrating.
    pub calibration_repeats: usize,
    pub adc_bits: Option<u32>,
}

impl Default for FaultConfig {
    fn default() -> Self {
        Self {
            neop_dbc: None,
            imbalance_db: 0.0,
            calibration: false,
            calibration_repeats: 64,
            adc_bits: None,
        }
    }
}

impl FaultConfig {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn noise(dbc: f64) -> Self {
        Self {
            neop_dbc: Some(dbc),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[label][prediction]`.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for all-digital inference.
    pub faults: Option<FaultConfig>,
    pub seed: u64,
}

impl InferenceReport {
    pub fn from_predictions(
        predictions: &[u8],
        labels: &[u8],
        classes: usize,
        faults: Option<FaultConfig>,
        seed: u64,
    ) -> Self {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &l) in predictions.iter().zip(labels) {
            confusion[l as usize][p as usize] += 1;
        }
        let correct = predictions
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        let total = predictions.len();
        Self {
            accuracy: if total == 0 {
                0.0
            } else {
                correct as f64 / total as f64
            },
            correct,
            total,
            confusion,
            faults,
            seed,
        }
    }
}

fn resolve_subset(data: &Dataset, subset: &[usize]) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Ok((0..data.len()).collect());
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Dataset(format!(
            "sample index {bad} out of range for {} samples",
            data.len()
        )));
    }
    Ok(subset.to_vec())
}

/// First `n` sample indices (all when `n` exceeds the dataset).
pub fn first_n(data: &Dataset, n: usize) -> Vec<usize> {
    (0..n.min(data.len())).collect()
}

pub fn predict_digital(net: &Network, data: &Dataset, subset: &[usize]) -> Result<Vec<u8>> {
    let idx = resolve_subset(data, subset)?;
    let chunks: Vec<&[usize]> = idx.chunks(128).collect();
    let parts = chunks
        .par_iter()
        .map(|c| net.predict(&data.batch(c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

/// All-digital inference over `subset` (every sample when empty).
pub fn infer_digital(net: &Network, data: &Dataset, subset: &[usize]) -> Result<InferenceReport> {
    let idx = resolve_subset(data, subset)?;
    let pred = predict_digital(net, data, &idx)?;
    Ok(InferenceReport::from_predictions(
        &pred,
        &data.labels_of(&idx),
        net.shape.classes,
        None,
        0,
    ))
}

/// Both conv layers mapped onto (possibly faulty) photonic hardware.
#[derive(Debug, Clone)]
pub struct PhotonicBackend {
    pub layers: Vec<PhotonicConvLayer>,
    pub faults: FaultConfig,
    pub seed: u64,
    /// Post-calibration residual per layer, when calibrated.
    pub calibration_residuals: Vec<f64>,
}

impl PhotonicBackend {
    pub fn build(net: &Network, faults: &FaultConfig, seed: u64) -> Result<Self> {
        let mut layers = Vec::new();
        let mut calibration_residuals = Vec::new();
        for (li, conv) in [&net.conv1, &net.conv2].into_iter().enumerate() {
            let spec = conv.spec;
            let programming = program_weights(&conv.kernels()?, &spec)?;
            let mut model = AnalogFaultModel::sampled(
                &spec,
                faults.neop_dbc,
                faults.imbalance_db,
                derive_seed(seed, &[0xFA, li as u64]),
            )?;
            model.adc_bits = faults.adc_bits;
            let mut layer = PhotonicConvLayer::new(programming, model)?;
            if faults.calibration {
                let table = calibrate(
                    &layer,
                    faults.calibration_repeats,
                    derive_seed(seed, &[0xCA, li as u64]),
                )?;
                calibration_residuals.push(table.residual);
                layer = layer.reprogram(apply_calibration(layer.programming(), &table)?)?;
            }
            layers.push(layer);
        }
        Ok(Self {
            layers,
            faults: *faults,
            seed,
            calibration_residuals,
        })
    }

    /// Logits for one sample `[1][rows][cols]`.
    pub fn logits(
        &self,
        net: &Network,
        image: &Array3<f64>,
        sample_index: usize,
    ) -> Result<Vec<f64>> {
        let mut rng = rng_from(self.seed, &[0x5A, sample_index as u64]);
        let x = image.clone().insert_axis(Axis(0));
        let logits = net.logits_with(&x, &mut |li, conv, input: &Array4<f64>| {
            let sample = input.index_axis(Axis(0), 0).to_owned();
            let peak = sample.iter().fold(0.0f64, |m, &v| m.max(v));
            let scale = if peak > 0.0 { peak } else { 1.0 };
            let mut out = self.layers[li].forward(&(sample / scale), &mut rng)?;
            out *= scale;
            Network::add_bias(&mut out, &conv.bias);
            Ok(out.insert_axis(Axis(0)))
        })?;
        Ok(logits.row(0).to_vec())
    }

    pub fn predict(&self, net: &Network, data: &Dataset, subset: &[usize]) -> Result<Vec<u8>> {
        let idx = resolve_subset(data, subset)?;
        idx.par_iter()
            .map(|&i| {
                let l = self.logits(net, &data.image(i), i)?;
                Ok(argmax(ndarray::ArrayView1::from(&l)) as u8)
            })
            .collect()
    }
}

/// Hybrid inference: convs on simulated hardware built from `seed`.
pub fn infer_hybrid(
    net: &Network,
    data: &Dataset,
    subset: &[usize],
    faults: &FaultConfig,
    seed: u64,
) -> Result<InferenceReport> {
    let idx = resolve_subset(data, subset)?;
    let backend = PhotonicBackend::build(net, faults, seed)?;
    let pred = backend.predict(net, data, &idx)?;
    Ok(InferenceReport::from_predictions(
        &pred,
        &data.labels_of(&idx),
        net.shape.classes,
        Some(*faults),
        seed,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevelSummary {
    /// `None` is the noiseless limit.
    pub neop_dbc: Option<f64>,
    pub reports: Vec<InferenceReport>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// One report per `(level, seed)`; levels must be sorted ascending with the
/// noiseless `None` first.
pub fn sweep_noise(
    net: &Network,
    data: &Dataset,
    subset: &[usize],
    levels: &[Option<f64>],
    seeds: &[u64],
    base: &FaultConfig,
) -> Result<Vec<NoiseLevelSummary>> {
    if seeds.is_empty() {
        return Err(Error::param("seeds", "need at least one seed"));
    }
    let key = |l: &Option<f64>| l.unwrap_or(f64::NEG_INFINITY);
    if levels.windows(2).any(|w| key(&w[0]) > key(&w[1])) {
        return Err(Error::param("levels", "must be sorted ascending"));
    }
    levels
        .iter()
        .map(|&level| {
            let faults = FaultConfig {
                neop_dbc: level,
                ..*base
            };
            let reports = seeds
                .iter()
                .map(|&s| infer_hybrid(net, data, subset, &faults, s))
                .collect::<Result<Vec<_>>>()?;
            let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
            Ok(NoiseLevelSummary {
                neop_dbc: level,
                mean_accuracy: mean(&acc),
                std_accuracy: std_dev(&acc),
                reports,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceLevelSummary {
    pub imbalance_db: f64,
    /// Accuracy per trial, in trial order.
    pub accuracies: Vec<f64>,
    pub trial_seeds: Vec<u64>,
    pub stats: BoxStats,
}

/// `trials` fresh imbalance draws per level. Trial `t` uses seed
/// `derive_seed(seed, [t])` at every level.
pub fn sweep_imbalance(
    net: &Network,
    data: &Dataset,
    subset: &[usize],
    levels_db: &[f64],
    trials: usize,
    base: &FaultConfig,
    seed: u64,
) -> Result<Vec<ImbalanceLevelSummary>> {
    if trials == 0 {
        return Err(Error::param("trials", "must be >= 1"));
    }
    levels_db
        .iter()
        .map(|&level| {
            let faults = FaultConfig {
                imbalance_db: level,
                ..*base
            };
            let trial_seeds: Vec<u64> = (0..trials as u64)
                .map(|t| derive_seed(seed, &[t]))
                .collect();
            let accuracies = trial_seeds
                .iter()
                .map(|&s| infer_hybrid(net, data, subset, &faults, s).map(|r| r.accuracy))
                .collect::<Result<Vec<_>>>()?;
            Ok(ImbalanceLevelSummary {
                imbalance_db: level,
                stats: BoxStats::from_samples(&accuracies).expect("trials >= 1"),
                accuracies,
                trial_seeds,
            })
        })
        .collect()
}
