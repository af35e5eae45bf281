//! Probe-based imbalance measurement and digital calibration.
//!
//! Every path `(u, q, v)` is probed by programming a single unit weight and
//! driving all wavelengths at unit intensity; the branch reading divided by
//! the ideal reading (1) estimates the path gain. Compensation divides the
//! programmed settings by the estimates and renormalises them into `[−1, 1]`,
//! moving the growth into the digital rescale factor, which is also what
//! amplifies detection noise after calibration.

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use super::{PhotonicConvLayer, WeightProgramming};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    /// Estimated gains indexed `[u][q][v]`.
    pub gains: Array3<f64>,
    /// Probes averaged per path.
    pub probe_count: usize,
    /// Max `|probe / ĝ − 1|` over a fresh round of probes.
    pub residual: f64,
}

/// Imbalance level seen by noiseless probes, `10·log10(max/min)` in dB.
pub fn measure_imbalance(layer: &PhotonicConvLayer) -> Result<f64> {
    let spec = layer.spec();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for u in 0..spec.c_in {
        for q in 0..spec.taps() {
            for v in 0..spec.c_out {
                let r = layer.probe_branch_noiseless(u, q, v);
                if !(r > 0.0) {
                    return Err(Error::DegenerateHardware(format!(
                        "path (u={u}, q={q}, v={v}) responds with {r}"
                    )));
                }
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
    }
    Ok(10.0 * (hi / lo).log10())
}

/// Estimates every path gain from `repeats` averaged probes.
pub fn calibrate(layer: &PhotonicConvLayer, repeats: usize, seed: u64) -> Result<CalibrationTable> {
    if repeats == 0 {
        return Err(Error::param("repeats", "must be >= 1"));
    }
    let spec = *layer.spec();
    let mut rng = rng_from(seed, &[0xCA1]);
    let mut gains = Array3::zeros((spec.c_in, spec.taps(), spec.c_out));
    for ((u, q, v), g) in gains.indexed_iter_mut() {
        let sum: f64 = (0..repeats)
            .map(|_| layer.probe_branch(u, q, v, &mut rng))
            .sum();
        let estimate = sum / repeats as f64;
        if !(estimate > 0.0) {
            return Err(Error::Calibration(format!(
                "path (u={u}, q={q}, v={v}) measured {estimate}; cannot compensate"
            )));
        }
        *g = estimate;
    }
    let mut residual: f64 = 0.0;
    for ((u, q, v), &g) in gains.indexed_iter() {
        let sum: f64 = (0..repeats)
            .map(|_| layer.probe_branch(u, q, v, &mut rng))
            .sum();
        residual = residual.max((sum / repeats as f64 / g - 1.0).abs());
    }
    Ok(CalibrationTable {
        gains,
        probe_count: repeats,
        residual,
    })
}

/// Pre-compensates the settings by the estimated gains.
pub fn apply_calibration(
    programming: &WeightProgramming,
    table: &CalibrationTable,
) -> Result<WeightProgramming> {
    if programming.settings.dim() != table.gains.dim() {
        return Err(Error::Calibration(format!(
            "table shape {:?} does not match programming {:?}",
            table.gains.dim(),
            programming.settings.dim()
        )));
    }
    if let Some(g) = table.gains.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::Calibration(format!(
            "gain estimate {g} is not positive"
        )));
    }
    let mut settings = programming.settings.clone();
    Zip::from(&mut settings)
        .and(&table.gains)
        .for_each(|s, &g| *s /= g);
    let peak = settings.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let mut rescale = programming.rescale;
    if peak > 0.0 && peak != 1.0 {
        settings.mapv_inplace(|s| s / peak);
        rescale *= peak;
    }
    Ok(WeightProgramming {
        spec: programming.spec,
        settings,
        rescale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv_math::ConvLayerSpec;
    use crate::photonic::{program_weights, AnalogFaultModel};
    use ndarray::Array4;

    fn layer_with(faults: AnalogFaultModel, spec: &ConvLayerSpec) -> PhotonicConvLayer {
        let k = Array4::from_shape_fn(
            (spec.c_in, spec.c_out, spec.sigma, spec.sigma),
            |(u, v, i, j)| ((u + 2 * v + 3 * i + j) % 5) as f64 - 2.0,
        );
        PhotonicConvLayer::new(program_weights(&k, spec).unwrap(), faults).unwrap()
    }

    #[test]
    fn ideal_hardware_measures_zero_and_calibrates_to_one() {
        let spec = ConvLayerSpec::new(2, 3, 3, 5).unwrap();
        let layer = layer_with(AnalogFaultModel::ideal(&spec), &spec);
        assert_eq!(measure_imbalance(&layer).unwrap(), 0.0);
        let table = calibrate(&layer, 1, 0).unwrap();
        assert!(table.gains.iter().all(|&g| g == 1.0));
        assert_eq!(table.residual, 0.0);
        let same = apply_calibration(layer.programming(), &table).unwrap();
        assert_eq!(&same, layer.programming());
    }

    #[test]
    fn single_weak_path() {
        let spec = ConvLayerSpec::new(2, 2, 2, 3).unwrap();
        let mut faults = AnalogFaultModel::ideal(&spec);
        faults.path_gains[[0, 1, 1]] = 0.5;
        let layer = layer_with(faults, &spec);
        assert!((measure_imbalance(&layer).unwrap() - 3.0103).abs() < 1e-4);
    }

    #[test]
    fn dead_path_is_degenerate() {
        let spec = ConvLayerSpec::new(1, 1, 2, 3).unwrap();
        let mut faults = AnalogFaultModel::ideal(&spec);
        faults.path_gains[[0, 2, 0]] = 0.0;
        let layer = layer_with(faults, &spec);
        assert!(matches!(
            measure_imbalance(&layer),
            Err(Error::DegenerateHardware(_))
        ));
        assert!(matches!(
            calibrate(&layer, 4, 0),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn non_positive_estimate_rejected() {
        let spec = ConvLayerSpec::new(1, 1, 1, 2).unwrap();
        let layer = layer_with(AnalogFaultModel::ideal(&spec), &spec);
        let table = CalibrationTable {
            gains: Array3::from_elem((1, 1, 1), -0.2),
            probe_count: 1,
            residual: 0.0,
        };
        assert!(apply_calibration(layer.programming(), &table).is_err());
    }
}
