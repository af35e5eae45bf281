use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv_math::ConvLayerSpec;
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Analog non-idealities of one layer's hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogFaultModel {
    /// Detection noise relative to full scale, dBc (power ratio).
    /// `f64::NEG_INFINITY` disables noise.
    pub neop_dbc: f64,
    /// Requested imbalance level, dB.
    pub imbalance_db: f64,
    /// Multiplicative gains indexed `[u][q][v]`.
    pub path_gains: Array3<f64>,
    pub seed: u64,
    /// Optional ADC resolution applied to the summed detector output.
    pub adc_bits: Option<u32>,
}

impl AnalogFaultModel {
    pub fn ideal(spec: &ConvLayerSpec) -> Self {
        Self {
            neop_dbc: f64::NEG_INFINITY,
            imbalance_db: 0.0,
            path_gains: Array3::ones((spec.c_in, spec.taps(), spec.c_out)),
            seed: 0,
            adc_bits: None,
        }
    }

    /// Noise at `neop_dbc` (or none for `None`) plus imbalance sampled at
    /// `imbalance_db` from `seed`.
    pub fn sampled(
        spec: &ConvLayerSpec,
        neop_dbc: Option<f64>,
        imbalance_db: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            neop_dbc: neop_dbc.unwrap_or(f64::NEG_INFINITY),
            imbalance_db,
            path_gains: sample_imbalance(spec, imbalance_db, seed)?,
            seed,
            adc_bits: None,
        })
    }

    /// Standard deviation of the per-branch additive noise, `10^(dBc/10)`.
    pub fn noise_sigma(&self) -> f64 {
        if self.neop_dbc == f64::NEG_INFINITY {
            0.0
        } else {
            10f64.powf(self.neop_dbc / 10.0)
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_sigma() == 0.0
    }

    pub fn without_noise(&self) -> Self {
        Self {
            neop_dbc: f64::NEG_INFINITY,
            ..self.clone()
        }
    }

    /// `10·log10(max g / min g)` over all paths.
    pub fn realized_imbalance_db(&self) -> f64 {
        let (lo, hi) = self
            .path_gains
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| {
                (lo.min(g), hi.max(g))
            });
        10.0 * (hi / lo).log10()
    }
}

/// Per-path gains with a max/min ratio of exactly `level_db`.
///
/// Gains are drawn uniformly in dB (log-uniform), then stretched affinely so
/// the strongest path sits at 0 dB and the weakest at `−level_db`; imbalance
/// only ever attenuates. A layer with a single path cannot be imbalanced and
/// gets unit gain.
pub fn sample_imbalance(spec: &ConvLayerSpec, level_db: f64, seed: u64) -> Result<Array3<f64>> {
    spec.validate()?;
    if !(level_db >= 0.0) || !level_db.is_finite() {
        return Err(Error::param(
            "imbalance_db",
            format!("must be finite and >= 0, got {level_db}"),
        ));
    }
    let dim = (spec.c_in, spec.taps(), spec.c_out);
    if level_db == 0.0 {
        return Ok(Array3::ones(dim));
    }
    let mut rng = rng_from(seed, &[0x1_4BA1]);
    let draws = Array3::from_shape_fn(dim, |_| rng.random::<f64>());
    let (lo, hi) = draws
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
    if hi <= lo {
        return Ok(Array3::ones(dim));
    }
    Ok(draws.mapv(|d| {
        let db = -level_db * (hi - d) / (hi - lo);
        10f64.powf(db / 10.0)
    }))
}
