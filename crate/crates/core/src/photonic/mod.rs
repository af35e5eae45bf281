//! Analog forward model of one convolutional layer.
//!
//! Per output channel `v`, kernel tap `q` and clock cycle `t` the balanced
//! detector of branch `(v, q)` reads
//!
//! ```text
//! b(v, q, t) = Σ_u g(u, q, v) · s(u, q, v) · X'(u·Q + q, t) + η,   η ~ N(0, σ_n)
//! ```
//!
//! where `s ∈ [−1, 1]` are the programmed ring settings, `g` the per-path
//! imbalance gains and `σ_n = 10^(NEOP_dBc / 10)` relative to the full-scale
//! detected value of one wavelength at unit intensity and unit weight. The
//! TIA outputs of the `Q` branches are summed and scaled digitally by the
//! programming's rescale factor.

mod calibration;
mod faults;

pub use calibration::{apply_calibration, calibrate, measure_imbalance, CalibrationTable};
pub use faults::{sample_imbalance, AnalogFaultModel};

use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conv_math::{
    build_delayed_matrix, extract_valid, ConvLayerSpec, ImageTensor, KernelTensor,
};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Kernel magnitudes below this are treated as an all-zero layer.
pub const ZERO_KERNEL_EPS: f64 = 1e-30;

/// Ring settings and the digital rescale that restores kernel magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProgramming {
    pub spec: ConvLayerSpec,
    /// Settings indexed `[u][q][v]`, each within `[−1, 1]`.
    pub settings: Array3<f64>,
    pub rescale: f64,
}

impl WeightProgramming {
    /// Kernel tensor represented by `settings · rescale`.
    pub fn kernels(&self) -> KernelTensor {
        let sigma = self.spec.sigma;
        KernelTensor::from_shape_fn(
            (self.spec.c_in, self.spec.c_out, sigma, sigma),
            |(u, v, i, j)| self.settings[[u, i * sigma + j, v]] * self.rescale,
        )
    }

    /// All-zero settings except a unit weight on path `(u, q, v)`.
    pub fn one_hot(spec: &ConvLayerSpec, u: usize, q: usize, v: usize) -> Self {
        let mut settings = Array3::zeros((spec.c_in, spec.taps(), spec.c_out));
        settings[[u, q, v]] = 1.0;
        Self {
            spec: *spec,
            settings,
            rescale: 1.0,
        }
    }
}

/// Normalises kernels into ring settings: `s = w / max|w|`, rescale `max|w|`.
pub fn program_weights(kernels: &KernelTensor, spec: &ConvLayerSpec) -> Result<WeightProgramming> {
    spec.validate()?;
    spec.check_kernels(&kernels.view())?;
    if let Some(bad) = kernels.iter().find(|w| !w.is_finite()) {
        return Err(Error::param("kernels", format!("non-finite value {bad}")));
    }
    let peak = kernels.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let rescale = if peak < ZERO_KERNEL_EPS { 1.0 } else { peak };
    let sigma = spec.sigma;
    let settings = Array3::from_shape_fn((spec.c_in, spec.taps(), spec.c_out), |(u, q, v)| {
        kernels[[u, v, q / sigma, q % sigma]] / rescale
    });
    Ok(WeightProgramming {
        spec: *spec,
        settings,
        rescale,
    })
}

/// Output of a forward pass together with the raw branch readings.
#[derive(Debug, Clone)]
pub struct PhotonicOutput {
    /// Valid outputs `[v][m][n]`.
    pub output: Array3<f64>,
    /// Branch detector readings `[v][q][t]` before summation and rescale.
    pub traces: Array3<f64>,
}

/// One convolutional layer mapped onto the accelerator.
#[derive(Debug, Clone)]
pub struct PhotonicConvLayer {
    spec: ConvLayerSpec,
    programming: WeightProgramming,
    faults: AnalogFaultModel,
    /// Per tap `q`: the `c_out × c_in` matrix of `g · s`.
    tap_matrices: Vec<Array2<f64>>,
}

impl PhotonicConvLayer {
    pub fn new(programming: WeightProgramming, faults: AnalogFaultModel) -> Result<Self> {
        let spec = programming.spec;
        spec.validate()?;
        let expected = (spec.c_in, spec.taps(), spec.c_out);
        for (axis, want, got) in [
            ("settings", expected, programming.settings.dim()),
            ("path gains", expected, faults.path_gains.dim()),
        ] {
            if want != got {
                let (a, b) = if want.0 != got.0 {
                    (want.0, got.0)
                } else if want.1 != got.1 {
                    (want.1, got.1)
                } else {
                    (want.2, got.2)
                };
                return Err(Error::Dimension {
                    axis,
                    expected: a,
                    actual: b,
                });
            }
        }
        if !(programming.rescale > 0.0) {
            return Err(Error::param("rescale", "must be positive"));
        }
        let tap_matrices = (0..spec.taps())
            .map(|q| {
                Array2::from_shape_fn((spec.c_out, spec.c_in), |(v, u)| {
                    faults.path_gains[[u, q, v]] * programming.settings[[u, q, v]]
                })
            })
            .collect();
        Ok(Self {
            spec,
            programming,
            faults,
            tap_matrices,
        })
    }

    pub fn spec(&self) -> &ConvLayerSpec {
        &self.spec
    }

    pub fn programming(&self) -> &WeightProgramming {
        &self.programming
    }

    pub fn faults(&self) -> &AnalogFaultModel {
        &self.faults
    }

    /// Same hardware, different weights.
    pub fn reprogram(&self, programming: WeightProgramming) -> Result<Self> {
        Self::new(programming, self.faults.clone())
    }

    fn check_intensity(images: &ImageTensor) -> Result<()> {
        if let Some((idx, &value)) = images.indexed_iter().find(|(_, &x)| !(x >= 0.0)) {
            return Err(Error::Encoding {
                value,
                index: [idx.0, idx.1, idx.2],
            });
        }
        Ok(())
    }

    /// Summed detector output `c_out × (L² + D_max)` before rescale, plus
    /// optionally the per-branch traces.
    fn detect(
        &self,
        images: &ImageTensor,
        rng: &mut SimRng,
        keep_traces: bool,
    ) -> Result<(Array2<f64>, Option<Array3<f64>>)> {
        self.spec.check_images(&images.view())?;
        Self::check_intensity(images)?;
        let delayed = build_delayed_matrix(images, &self.spec)?;
        let q_count = self.spec.taps();
        let cols = self.spec.delayed_columns();
        let sigma_n = self.faults.noise_sigma();
        let mut summed = Array2::<f64>::zeros((self.spec.c_out, cols));
        let mut traces = keep_traces.then(|| Array3::zeros((self.spec.c_out, q_count, cols)));
        for (q, tap) in self.tap_matrices.iter().enumerate() {
            let rows = delayed.data.slice(s![q..;q_count, ..]);
            let mut branch = tap.dot(&rows);
            if sigma_n > 0.0 {
                branch.mapv_inplace(|b| b + sigma_n * rng.sample::<f64, _>(StandardNormal));
            }
            if let Some(tr) = traces.as_mut() {
                tr.index_axis_mut(Axis(1), q).assign(&branch);
            }
            summed += &branch;
        }
        if let Some(bits) = self.faults.adc_bits {
            let full_scale = (self.spec.c_in * q_count) as f64;
            summed.mapv_inplace(|x| quantize(x, full_scale, bits));
        }
        Ok((summed, traces))
    }

    /// Valid convolution outputs `[v][m][n]`.
    pub fn forward(&self, images: &ImageTensor, rng: &mut SimRng) -> Result<Array3<f64>> {
        let (summed, _) = self.detect(images, rng, false)?;
        let mut out = extract_valid(&summed, &self.spec);
        out *= self.programming.rescale;
        Ok(out)
    }

    pub fn forward_with_traces(
        &self,
        images: &ImageTensor,
        rng: &mut SimRng,
    ) -> Result<PhotonicOutput> {
        let (summed, traces) = self.detect(images, rng, true)?;
        let mut output = extract_valid(&summed, &self.spec);
        output *= self.programming.rescale;
        Ok(PhotonicOutput {
            output,
            traces: traces.expect("traces requested"),
        })
    }

    /// Reading of branch `(v, q)` with a unit weight on path `(u, q, v)`,
    /// zero elsewhere, and unit intensity on every wavelength.
    pub fn probe_branch(&self, u: usize, q: usize, v: usize, rng: &mut SimRng) -> f64 {
        let clean = self.probe_branch_noiseless(u, q, v);
        let sigma_n = self.faults.noise_sigma();
        if sigma_n > 0.0 {
            clean + sigma_n * rng.sample::<f64, _>(StandardNormal)
        } else {
            clean
        }
    }

    pub fn probe_branch_noiseless(&self, u: usize, q: usize, v: usize) -> f64 {
        // Only the probed ring is non-zero, so the branch sees its gain alone.
        self.faults.path_gains[[u, q, v]]
    }
}

/// Mid-tread uniform quantiser over `[−full_scale, full_scale]`.
pub fn quantize(x: f64, full_scale: f64, bits: u32) -> f64 {
    let levels = (1u64 << bits.min(52)) as f64;
    let step = 2.0 * full_scale / (levels - 1.0).max(1.0);
    ((x / step).round() * step).clamp(-full_scale, full_scale)
}

/// Convenience: programs `kernels` and runs them on the given hardware.
pub fn photonic_conv_forward(
    images: &ImageTensor,
    programming: &WeightProgramming,
    faults: &AnalogFaultModel,
    rng: &mut SimRng,
) -> Result<PhotonicOutput> {
    PhotonicConvLayer::new(programming.clone(), faults.clone())?.forward_with_traces(images, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv_math::conv2d_reference;
    use crate::rng::rng_from;
    use ndarray::Array4;
    use rand::Rng;

    fn random_case(seed: u64, spec: &ConvLayerSpec) -> (ImageTensor, KernelTensor) {
        let mut rng = rng_from(seed, &[]);
        let x = Array3::from_shape_fn((spec.c_in, spec.image_width, spec.image_width), |_| {
            rng.random::<f64>()
        });
        let w = Array4::from_shape_fn((spec.c_in, spec.c_out, spec.sigma, spec.sigma), |_| {
            rng.random_range(-2.0..2.0)
        });
        (x, w)
    }

    #[test]
    fn programming_normalises_and_round_trips() {
        let spec = ConvLayerSpec::new(2, 3, 3, 5).unwrap();
        let mut k = Array4::zeros((2, 3, 3, 3));
        k[[1, 2, 0, 1]] = -2.5;
        k[[0, 0, 2, 2]] = 1.0;
        let p = program_weights(&k, &spec).unwrap();
        assert_eq!(p.rescale, 2.5);
        assert!(p.settings.iter().all(|s| s.abs() <= 1.0));
        assert_eq!(p.settings[[1, 1, 2]], -1.0);
        assert_eq!(p.kernels(), k);

        let small = k.mapv(|w| w / 4.0);
        let p = program_weights(&small, &spec).unwrap();
        assert_eq!(p.rescale, 0.625);

        let zero = program_weights(&Array4::zeros((2, 3, 3, 3)), &spec).unwrap();
        assert_eq!(zero.rescale, 1.0);
        assert!(zero.settings.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn ideal_hardware_matches_reference() {
        let spec = ConvLayerSpec::new(2, 3, 3, 6).unwrap();
        let (x, w) = random_case(11, &spec);
        let layer = PhotonicConvLayer::new(
            program_weights(&w, &spec).unwrap(),
            AnalogFaultModel::ideal(&spec),
        )
        .unwrap();
        let y = layer.forward(&x, &mut rng_from(0, &[])).unwrap();
        let reference = conv2d_reference(&x, &w, &spec).unwrap();
        let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in y.iter().zip(reference.iter()) {
            assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn uniform_gain_scales_output() {
        let spec = ConvLayerSpec::new(2, 2, 2, 4).unwrap();
        let (x, w) = random_case(3, &spec);
        let p = program_weights(&w, &spec).unwrap();
        let ideal = PhotonicConvLayer::new(p.clone(), AnalogFaultModel::ideal(&spec)).unwrap();
        let mut doubled = AnalogFaultModel::ideal(&spec);
        doubled.path_gains.fill(2.0);
        let hot = PhotonicConvLayer::new(p, doubled).unwrap();
        let mut rng = rng_from(0, &[]);
        let a = ideal.forward(&x, &mut rng).unwrap();
        let b = hot.forward(&x, &mut rng).unwrap();
        assert_eq!(b, a.mapv(|v| 2.0 * v));
    }

    #[test]
    fn negative_intensity_is_rejected() {
        let spec = ConvLayerSpec::new(1, 1, 2, 3).unwrap();
        let layer = PhotonicConvLayer::new(
            program_weights(&Array4::ones((1, 1, 2, 2)), &spec).unwrap(),
            AnalogFaultModel::ideal(&spec),
        )
        .unwrap();
        let mut x = Array3::ones((1, 3, 3));
        x[[0, 1, 2]] = -0.1;
        match layer.forward(&x, &mut rng_from(0, &[])) {
            Err(Error::Encoding { index, .. }) => assert_eq!(index, [0, 1, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn probe_reads_single_path_gain() {
        let spec = ConvLayerSpec::new(2, 2, 2, 3).unwrap();
        let mut faults = AnalogFaultModel::ideal(&spec);
        faults.path_gains[[1, 3, 0]] = 0.5;
        let layer = PhotonicConvLayer::new(
            program_weights(&Array4::ones((2, 2, 2, 2)), &spec).unwrap(),
            faults,
        )
        .unwrap();
        assert_eq!(layer.probe_branch_noiseless(1, 3, 0), 0.5);
        assert_eq!(layer.probe_branch_noiseless(0, 3, 0), 1.0);
    }

    #[test]
    fn quantizer_levels() {
        assert_eq!(quantize(0.0, 1.0, 8), 0.0);
        assert_eq!(quantize(5.0, 1.0, 8), 1.0);
        assert_eq!(quantize(-5.0, 1.0, 8), -1.0);
        let step = 2.0 / 255.0;
        assert!((quantize(0.3, 1.0, 8) - (0.3f64 / step).round() * step).abs() < 1e-15);
    }
}
