//! Randomised check that the delay-buffered pipeline reproduces direct
//! convolution.

use ndarray::{Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conv_math::{
    build_delayed_matrix_with_offsets, conv2d_reference, delay_offsets, gemm_conv, im2col,
    weight_matrix, ConvLayerSpec,
};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquivalenceConfig {
    pub instances: usize,
    pub max_channels: usize,
    pub sigmas: Vec<usize>,
    pub max_width: usize,
    /// Relative tolerance on valid outputs.
    pub tolerance: f64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            max_channels: 8,
            sigmas: vec![1, 2, 3, 5],
            max_width: 16,
            tolerance: 1e-12,
        }
    }
}

impl EquivalenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.max_channels == 0 {
            return Err(Error::param(
                "instances",
                "instances and max_channels must be >= 1",
            ));
        }
        if self.sigmas.is_empty() || self.sigmas.contains(&0) {
            return Err(Error::param(
                "sigmas",
                "need at least one kernel width >= 1",
            ));
        }
        if self.sigmas.iter().any(|&s| s > self.max_width) {
            return Err(Error::param("max_width", "must be >= every kernel width"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::param("tolerance", "must be >= 0"));
        }
        Ok(())
    }
}

/// First disagreement between the delayed matrix and im2col, or between
/// the pipeline output and the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub instance: usize,
    pub spec: ConvLayerSpec,
    /// `"input"` for the patch matrix, `"output"` for convolution results.
    pub stage: String,
    pub row: usize,
    pub column: usize,
    pub expected: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub instances: usize,
    pub max_relative_error: f64,
    /// SHA-256 over every pipeline output, little-endian f64.
    pub digest: String,
    pub failure: Option<Mismatch>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

pub fn random_spec(rng: &mut impl Rng, cfg: &EquivalenceConfig) -> ConvLayerSpec {
    let sigma = cfg.sigmas[rng.random_range(0..cfg.sigmas.len())];
    let c_in = rng.random_range(1..=cfg.max_channels);
    let c_out = rng.random_range(1..=cfg.max_channels);
    let width = rng.random_range(sigma..=cfg.max_width);
    ConvLayerSpec::new(c_in, c_out, sigma, width).expect("drawn within bounds")
}

/// Runs `cfg.instances` random cases. With `corrupt_offsets` the first
/// tap's delay offset is bumped by one wherever that is representable.
pub fn verify_equivalence(
    cfg: &EquivalenceConfig,
    seed: u64,
    corrupt_offsets: bool,
) -> Result<EquivalenceReport> {
    cfg.validate()?;
    let mut hasher = Sha256::new();
    let mut max_rel: f64 = 0.0;
    for instance in 0..cfg.instances {
        let mut rng = rng_from(seed, &[instance as u64]);
        let spec = random_spec(&mut rng, cfg);
        let l = spec.image_width;
        let images = Array3::from_shape_fn((spec.c_in, l, l), |_| rng.random::<f64>());
        let kernels =
            Array4::from_shape_fn((spec.c_in, spec.c_out, spec.sigma, spec.sigma), |_| {
                rng.random_range(-1.0..1.0)
            });
        let mut offsets = delay_offsets(spec.sigma, l)?;
        if corrupt_offsets && spec.max_delay() > 0 {
            offsets[0] += 1;
        }
        let delayed = build_delayed_matrix_with_offsets(&images, &spec, &offsets)?;
        let patches = im2col(&images, &spec)?;
        let got = delayed.valid_submatrix();
        if let Some(((row, column), &expected)) = patches
            .indexed_iter()
            .find(|&((r, c), &e)| got[[r, c]] != e)
        {
            return Ok(EquivalenceReport {
                instances: instance + 1,
                max_relative_error: max_rel,
                digest: hex::encode(hasher.finalize()),
                failure: Some(Mismatch {
                    instance,
                    spec,
                    stage: "input".into(),
                    row,
                    column,
                    expected,
                    actual: got[[row, column]],
                }),
            });
        }
        let out = gemm_conv(&weight_matrix(&kernels, &spec)?, &delayed)?.valid_output();
        let reference = conv2d_reference(&images, &kernels, &spec)?;
        let scale = reference
            .iter()
            .fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        let ow = spec.out_width();
        let mut worst = (0.0, 0, 0);
        for ((v, m, n), &r) in reference.indexed_iter() {
            let rel = (out[[v, m, n]] - r).abs() / scale;
            if rel > worst.0 {
                worst = (rel, v, m * ow + n);
            }
        }
        max_rel = max_rel.max(worst.0);
        for v in out.iter() {
            hasher.update(v.to_le_bytes());
        }
        if worst.0 > cfg.tolerance {
            let (_, v, p) = worst;
            return Ok(EquivalenceReport {
                instances: instance + 1,
                max_relative_error: max_rel,
                digest: hex::encode(hasher.finalize()),
                failure: Some(Mismatch {
                    instance,
                    spec,
                    stage: "output".into(),
                    row: v,
                    column: p,
                    expected: reference[[v, p / ow, p % ow]],
                    actual: out[[v, p / ow, p % ow]],
                }),
            });
        }
    }
    Ok(EquivalenceReport {
        instances: cfg.instances,
        max_relative_error: max_rel,
        digest: hex::encode(hasher.finalize()),
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes_and_is_stable() {
        let cfg = EquivalenceConfig {
            instances: 20,
            ..Default::default()
        };
        let a = verify_equivalence(&cfg, 5, false).unwrap();
        assert!(a.passed(), "{a:?}");
        assert_eq!(a.digest, verify_equivalence(&cfg, 5, false).unwrap().digest);
    }

    #[test]
    fn corrupted_offsets_fail() {
        let cfg = EquivalenceConfig {
            instances: 20,
            sigmas: vec![3],
            ..Default::default()
        };
        let r = verify_equivalence(&cfg, 5, true).unwrap();
        let m = r.failure.expect("must fail");
        assert_eq!(m.instance, 0);
        assert_eq!(m.stage, "input");
        assert_eq!(m.row % 9, 0);
    }
}
