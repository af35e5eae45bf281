//! Index algebra of delay-buffered convolution.
//!
//! A stride-1, unpadded convolution of `c_in` square images of width `L` with
//! `σ × σ` kernels is rewritten as a product `Y' = W · X'`:
//!
//! * each image is serialised row by row into a sequence `x̄[s]`, `s = m·L + n`;
//! * tap `q = i·σ + j` of the kernel needs `x̄[s + D_q]` with
//!   `D_q = ⌊q/σ⌋·L + (q mod σ)`;
//! * a causal delay line can only *delay*, so the copy feeding kernel tap `q`
//!   is delayed by `D_max − D_q` (itself one of the `D` values, namely
//!   `D_{Q−1−q}`). At column `t = s + D_max` every row `(u, q)` then holds
//!   `x̄_u[s + D_q]`, i.e. one full im2col patch.
//!
//! Rows of [`DelayedMatrix`] are ordered `(u, q)` with `q` fastest, matching
//! the column order of [`weight_matrix`]. Weight matrices are stored
//! `c_out × (c_in·σ²)` so outputs are rows; the transposed layout drawn in
//! most GeMM diagrams is equivalent.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Images indexed `[u][m][n]`.
pub type ImageTensor = Array3<f64>;
/// Kernels indexed `[u][v][i][j]`.
pub type KernelTensor = ndarray::Array4<f64>;

/// Shape of one stride-1, unpadded convolutional layer on square images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub sigma: usize,
    pub image_width: usize,
}

impl ConvLayerSpec {
    pub fn new(c_in: usize, c_out: usize, sigma: usize, image_width: usize) -> Result<Self> {
        let spec = Self {
            c_in,
            c_out,
            sigma,
            image_width,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.sigma == 0 {
            return Err(Error::InvalidSpec(format!(
                "channel counts and kernel width must be >= 1 (got c_in={}, c_out={}, sigma={})",
                self.c_in, self.c_out, self.sigma
            )));
        }
        if self.image_width < self.sigma {
            return Err(Error::InvalidSpec(format!(
                "image width {} is smaller than kernel width {}",
                self.image_width, self.sigma
            )));
        }
        Ok(())
    }

    /// Q = σ².
    pub fn taps(&self) -> usize {
        self.sigma * self.sigma
    }

    pub fn out_width(&self) -> usize {
        self.image_width - self.sigma + 1
    }

    /// Number of valid output positions, `(L − σ + 1)²`.
    pub fn patches(&self) -> usize {
        self.out_width() * self.out_width()
    }

    /// Serialised sequence length, `L²`.
    pub fn sequence_len(&self) -> usize {
        self.image_width * self.image_width
    }

    /// `D_max = (σ − 1)(L + 1)`, the largest tap delay in clock cycles.
    pub fn max_delay(&self) -> usize {
        (self.sigma - 1) * (self.image_width + 1)
    }

    /// Rows of the input matrix, `c_in · σ²`.
    pub fn rows(&self) -> usize {
        self.c_in * self.taps()
    }

    /// Columns of the delayed matrix, `L² + D_max`.
    pub fn delayed_columns(&self) -> usize {
        self.sequence_len() + self.max_delay()
    }

    pub fn check_images(&self, images: &ArrayView3<f64>) -> Result<()> {
        let (c, h, w) = images.dim();
        check_axis("input channel", self.c_in, c)?;
        check_axis("image height", self.image_width, h)?;
        check_axis("image width", self.image_width, w)
    }

    pub fn check_kernels(&self, kernels: &ArrayView4<f64>) -> Result<()> {
        let (u, v, i, j) = kernels.dim();
        check_axis("kernel input channel", self.c_in, u)?;
        check_axis("kernel output channel", self.c_out, v)?;
        check_axis("kernel row", self.sigma, i)?;
        check_axis("kernel column", self.sigma, j)
    }
}

pub(crate) fn check_axis(axis: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            axis,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Direct evaluation of `y[v][m][n] = Σ_u Σ_i Σ_j w[u][v][i][j] · x[u][m+i][n+j]`.
pub fn conv2d_reference(
    images: &ImageTensor,
    kernels: &KernelTensor,
    spec: &ConvLayerSpec,
) -> Result<Array3<f64>> {
    spec.validate()?;
    spec.check_images(&images.view())?;
    spec.check_kernels(&kernels.view())?;
    let ow = spec.out_width();
    let mut out = Array3::zeros((spec.c_out, ow, ow));
    for v in 0..spec.c_out {
        for m in 0..ow {
            for n in 0..ow {
                let mut acc = 0.0;
                for u in 0..spec.c_in {
                    for i in 0..spec.sigma {
                        for j in 0..spec.sigma {
                            acc += kernels[[u, v, i, j]] * images[[u, m + i, n + j]];
                        }
                    }
                }
                out[[v, m, n]] = acc;
            }
        }
    }
    Ok(out)
}

/// Row-major serialisation, `x̄[s] = x[⌊s/L⌋][s mod L]`.
pub fn serialize(image: &ArrayView2<f64>) -> Array1<f64> {
    image.iter().copied().collect()
}

pub fn deserialize(sequence: &Array1<f64>, width: usize) -> Result<Array2<f64>> {
    check_axis("sequence length", width * width, sequence.len())?;
    Ok(Array2::from_shape_fn((width, width), |(m, n)| {
        sequence[m * width + n]
    }))
}

/// Tap offsets `D_q = ⌊q/σ⌋·L + (q mod σ)` for `q ∈ [0, σ²)`.
pub fn delay_offsets(sigma: usize, image_width: usize) -> Result<Vec<usize>> {
    if sigma == 0 {
        return Err(Error::InvalidSpec("kernel width must be >= 1".into()));
    }
    if image_width < sigma {
        return Err(Error::InvalidSpec(format!(
            "image width {image_width} is smaller than kernel width {sigma}"
        )));
    }
    Ok((0..sigma * sigma)
        .map(|q| (q / sigma) * image_width + q % sigma)
        .collect())
}

/// `true` at serialised positions `s = m·L + n` with `m, n ∈ [0, L − σ]`.
pub fn valid_mask(spec: &ConvLayerSpec) -> Vec<bool> {
    let l = spec.image_width;
    let last = l - spec.sigma;
    (0..l * l).map(|s| s / l <= last && s % l <= last).collect()
}

/// The delay-buffered input matrix `X'`.
///
/// Row `(u, q)` is the serialised image of channel `u` delayed by
/// `D_max − D_q` cycles, with explicit zeros outside the signal. Output
/// position `s` of the convolution is read at column `s + D_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedMatrix {
    pub spec: ConvLayerSpec,
    /// `(c_in·σ²) × (L² + D_max)`.
    pub data: Array2<f64>,
    /// Validity of each serialised position `s ∈ [0, L²)`.
    pub valid: Vec<bool>,
}

impl DelayedMatrix {
    /// Column holding output position `s`.
    pub fn column_of(&self, s: usize) -> usize {
        s + self.spec.max_delay()
    }

    pub fn valid_columns(&self) -> Vec<usize> {
        self.valid
            .iter()
            .enumerate()
            .filter(|(_, &ok)| ok)
            .map(|(s, _)| self.column_of(s))
            .collect()
    }

    /// The columns selected by the valid mask, in output order.
    pub fn valid_submatrix(&self) -> Array2<f64> {
        let cols = self.valid_columns();
        let mut out = Array2::zeros((self.data.nrows(), cols.len()));
        for (k, &c) in cols.iter().enumerate() {
            out.column_mut(k).assign(&self.data.column(c));
        }
        out
    }
}

/// Physical delay (in cycles) of the line feeding kernel tap `q`.
pub fn tap_line_delays(spec: &ConvLayerSpec) -> Result<Vec<usize>> {
    let d = delay_offsets(spec.sigma, spec.image_width)?;
    let d_max = spec.max_delay();
    Ok(d.iter().map(|&dq| d_max - dq).collect())
}

/// Serialises every channel and imposes the tap delays.
pub fn build_delayed_matrix(images: &ImageTensor, spec: &ConvLayerSpec) -> Result<DelayedMatrix> {
    let offsets = delay_offsets(spec.sigma, spec.image_width)?;
    build_delayed_matrix_with_offsets(images, spec, &offsets)
}

/// Same as [`build_delayed_matrix`] with an explicit offset table, so fault
/// injection harnesses can corrupt it. Every offset must be `<= D_max`.
pub fn build_delayed_matrix_with_offsets(
    images: &ImageTensor,
    spec: &ConvLayerSpec,
    offsets: &[usize],
) -> Result<DelayedMatrix> {
    spec.validate()?;
    spec.check_images(&images.view())?;
    check_axis("delay offset table", spec.taps(), offsets.len())?;
    let d_max = spec.max_delay();
    if let Some(&bad) = offsets.iter().find(|&&d| d > d_max) {
        return Err(Error::InvalidSpec(format!(
            "delay offset {bad} exceeds D_max = {d_max}"
        )));
    }
    let q_count = spec.taps();
    let seq_len = spec.sequence_len();
    let mut data = Array2::zeros((spec.rows(), spec.delayed_columns()));
    for u in 0..spec.c_in {
        let seq = serialize(&images.slice(s![u, .., ..]));
        for (q, &dq) in offsets.iter().enumerate() {
            let delay = d_max - dq;
            data.slice_mut(s![u * q_count + q, delay..delay + seq_len])
                .assign(&seq);
        }
    }
    Ok(DelayedMatrix {
        spec: *spec,
        data,
        valid: valid_mask(spec),
    })
}

/// Patch-and-flatten input matrix of shape `(c_in·σ²) × (L − σ + 1)²`.
///
/// Column `p = m·(L − σ + 1) + n` holds the `σ × σ` patch at `(m, n)` of
/// every channel, channels stacked vertically.
pub fn im2col(images: &ImageTensor, spec: &ConvLayerSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    spec.check_images(&images.view())?;
    let ow = spec.out_width();
    let q_count = spec.taps();
    let mut out = Array2::zeros((spec.rows(), spec.patches()));
    for u in 0..spec.c_in {
        for i in 0..spec.sigma {
            for j in 0..spec.sigma {
                let row = u * q_count + i * spec.sigma + j;
                for m in 0..ow {
                    for n in 0..ow {
                        out[[row, m * ow + n]] = images[[u, m + i, n + j]];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Flattens kernels into `W` of shape `c_out × (c_in·σ²)`,
/// `W[v][u·σ² + i·σ + j] = w[u][v][i][j]`.
pub fn weight_matrix(kernels: &KernelTensor, spec: &ConvLayerSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    spec.check_kernels(&kernels.view())?;
    let q_count = spec.taps();
    Ok(Array2::from_shape_fn(
        (spec.c_out, spec.rows()),
        |(v, r)| {
            let (u, q) = (r / q_count, r % q_count);
            kernels[[u, v, q / spec.sigma, q % spec.sigma]]
        },
    ))
}

/// Inverse of [`weight_matrix`].
pub fn kernels_from_matrix(weights: &Array2<f64>, spec: &ConvLayerSpec) -> Result<KernelTensor> {
    check_axis("weight rows", spec.c_out, weights.nrows())?;
    check_axis("weight columns", spec.rows(), weights.ncols())?;
    let q_count = spec.taps();
    Ok(KernelTensor::from_shape_fn(
        (spec.c_in, spec.c_out, spec.sigma, spec.sigma),
        |(u, v, i, j)| weights[[v, u * q_count + i * spec.sigma + j]],
    ))
}

/// Result of multiplying weights with a delayed matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedOutput {
    pub spec: ConvLayerSpec,
    /// `c_out × (L² + D_max)`.
    pub data: Array2<f64>,
    pub valid: Vec<bool>,
}

impl DelayedOutput {
    /// Valid columns reshaped to `[v][m][n]`.
    pub fn valid_output(&self) -> Array3<f64> {
        extract_valid(&self.data, &self.spec)
    }
}

/// Gathers the valid columns of a `c_out × (L² + D_max)` trace into images.
pub fn extract_valid(data: &Array2<f64>, spec: &ConvLayerSpec) -> Array3<f64> {
    let ow = spec.out_width();
    let l = spec.image_width;
    let d_max = spec.max_delay();
    Array3::from_shape_fn((data.nrows(), ow, ow), |(v, m, n)| {
        data[[v, m * l + n + d_max]]
    })
}

/// `Y' = W · X'`.
pub fn gemm_conv(weights: &Array2<f64>, delayed: &DelayedMatrix) -> Result<DelayedOutput> {
    let spec = delayed.spec;
    check_axis("weight rows", spec.c_out, weights.nrows())?;
    check_axis("weight columns", spec.rows(), weights.ncols())?;
    check_axis("delayed rows", spec.rows(), delayed.data.nrows())?;
    Ok(DelayedOutput {
        spec,
        data: weights.dot(&delayed.data),
        valid: delayed.valid.clone(),
    })
}

/// Delay of a tap expressed in time and waveguide length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalDelay {
    pub seconds: f64,
    pub meters: f64,
}

/// `t = D / f_m`, `length = t · v_g`.
pub fn physical_delay(
    cycles: usize,
    mod_rate_hz: f64,
    group_velocity: f64,
) -> Result<PhysicalDelay> {
    if !(mod_rate_hz > 0.0) || !mod_rate_hz.is_finite() {
        return Err(Error::param(
            "mod_rate_hz",
            format!("must be positive, got {mod_rate_hz}"),
        ));
    }
    if !(group_velocity > 0.0) {
        return Err(Error::param(
            "group_velocity",
            format!("must be positive, got {group_velocity}"),
        ));
    }
    let seconds = cycles as f64 / mod_rate_hz;
    Ok(PhysicalDelay {
        seconds,
        meters: seconds * group_velocity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array4};

    #[test]
    fn spec_rejects_small_images() {
        assert!(matches!(
            ConvLayerSpec::new(1, 1, 3, 2),
            Err(Error::InvalidSpec(_))
        ));
        assert!(ConvLayerSpec::new(0, 1, 1, 2).is_err());
        let s = ConvLayerSpec::new(2, 3, 3, 6).unwrap();
        assert_eq!((s.taps(), s.out_width(), s.max_delay()), (9, 4, 14));
    }

    #[test]
    fn all_ones_three_by_three_sums_to_nine() {
        let spec = ConvLayerSpec::new(1, 1, 3, 3).unwrap();
        let y =
            conv2d_reference(&Array3::ones((1, 3, 3)), &Array4::ones((1, 1, 3, 3)), &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y[[0, 0, 0]], 9.0);
    }

    #[test]
    fn identity_kernel_returns_input() {
        let spec = ConvLayerSpec::new(1, 1, 1, 4).unwrap();
        let x = Array3::from_shape_fn((1, 4, 4), |(_, m, n)| (m * 4 + n) as f64 * 0.5);
        let y = conv2d_reference(&x, &Array4::ones((1, 1, 1, 1)), &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn shape_mismatch_names_axis() {
        let spec = ConvLayerSpec::new(2, 1, 3, 6).unwrap();
        let err = conv2d_reference(
            &Array3::zeros((1, 6, 6)),
            &Array4::zeros((2, 1, 3, 3)),
            &spec,
        )
        .unwrap_err();
        match err {
            Error::Dimension {
                axis,
                expected,
                actual,
            } => {
                assert_eq!((axis, expected, actual), ("input channel", 2, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serialize_is_row_major() {
        let img = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(serialize(&img.view()).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        // s = mL + n at L = 6, (m, n) = (2, 3)
        let big = Array2::from_shape_fn((6, 6), |(m, n)| (m * 100 + n) as f64);
        assert_eq!(serialize(&big.view())[15], 203.0);
    }

    #[test]
    fn delay_offsets_known_values() {
        assert_eq!(
            delay_offsets(3, 6).unwrap(),
            vec![0, 1, 2, 6, 7, 8, 12, 13, 14]
        );
        assert_eq!(delay_offsets(1, 17).unwrap(), vec![0]);
        assert_eq!(
            delay_offsets(3, 28).unwrap(),
            vec![0, 1, 2, 28, 29, 30, 56, 57, 58]
        );
        assert!(delay_offsets(5, 4).is_err());
    }

    #[test]
    fn sigma_one_delayed_matrix_is_serialised_image() {
        let spec = ConvLayerSpec::new(2, 1, 1, 3).unwrap();
        let x = Array3::from_shape_fn((2, 3, 3), |(u, m, n)| (u * 9 + m * 3 + n) as f64);
        let d = build_delayed_matrix(&x, &spec).unwrap();
        assert_eq!(d.data.dim(), (2, 9));
        assert!(d.valid.iter().all(|&v| v));
        for u in 0..2 {
            assert_eq!(
                d.data.row(u).to_vec(),
                serialize(&x.slice(s![u, .., ..])).to_vec()
            );
        }
    }

    #[test]
    fn six_by_six_has_sixteen_valid_columns() {
        let spec = ConvLayerSpec::new(1, 1, 3, 6).unwrap();
        let d = build_delayed_matrix(&Array3::ones((1, 6, 6)), &spec).unwrap();
        assert_eq!(d.valid.iter().filter(|&&v| v).count(), 16);
        assert_eq!(d.data.dim(), (9, 36 + 14));
    }

    #[test]
    fn delayed_rows_hold_shifted_sequence() {
        let spec = ConvLayerSpec::new(1, 1, 3, 5).unwrap();
        let x = Array3::from_shape_fn((1, 5, 5), |(_, m, n)| 1.0 + (m * 5 + n) as f64);
        let d = build_delayed_matrix(&x, &spec).unwrap();
        let line = tap_line_delays(&spec).unwrap();
        for q in 0..9 {
            for t in 0..spec.delayed_columns() {
                let expected = if t >= line[q] && t - line[q] < 25 {
                    1.0 + (t - line[q]) as f64
                } else {
                    0.0
                };
                assert_eq!(d.data[[q, t]], expected, "q={q} t={t}");
            }
        }
        // The set of line delays is the set of offsets, reversed.
        let mut sorted = line.clone();
        sorted.reverse();
        assert_eq!(sorted, delay_offsets(3, 5).unwrap());
    }

    #[test]
    fn im2col_single_patch_is_flattened_image() {
        let spec = ConvLayerSpec::new(2, 1, 3, 3).unwrap();
        let x = Array3::from_shape_fn((2, 3, 3), |(u, m, n)| (u * 9 + m * 3 + n) as f64);
        let cols = im2col(&x, &spec).unwrap();
        assert_eq!(cols.dim(), (18, 1));
        assert_eq!(
            cols.column(0).to_vec(),
            x.iter().copied().collect::<Vec<_>>()
        );
        let spec6 = ConvLayerSpec::new(1, 1, 3, 6).unwrap();
        assert_eq!(
            im2col(&Array3::zeros((1, 6, 6)), &spec6).unwrap().dim(),
            (9, 16)
        );
    }

    #[test]
    fn gemm_identity_and_all_ones() {
        let spec = ConvLayerSpec::new(1, 1, 1, 4).unwrap();
        let x = Array3::from_shape_fn((1, 4, 4), |(_, m, n)| (m + 2 * n) as f64);
        let d = build_delayed_matrix(&x, &spec).unwrap();
        let y = gemm_conv(&Array2::ones((1, 1)), &d).unwrap();
        assert_eq!(y.valid_output(), x);

        let spec = ConvLayerSpec::new(2, 1, 3, 5).unwrap();
        let d = build_delayed_matrix(&Array3::ones((2, 5, 5)), &spec).unwrap();
        let w = weight_matrix(&Array4::ones((2, 1, 3, 3)), &spec).unwrap();
        let y = gemm_conv(&w, &d).unwrap().valid_output();
        assert!(y.iter().all(|&v| v == 18.0));
    }

    #[test]
    fn weight_matrix_round_trip() {
        let spec = ConvLayerSpec::new(2, 3, 2, 4).unwrap();
        let k = Array4::from_shape_fn((2, 3, 2, 2), |(u, v, i, j)| {
            (u * 1000 + v * 100 + i * 10 + j) as f64
        });
        let w = weight_matrix(&k, &spec).unwrap();
        assert_eq!(w[[2, 1 * 4 + 1 * 2 + 0]], 1210.0);
        assert_eq!(kernels_from_matrix(&w, &spec).unwrap(), k);
        assert!(matches!(
            gemm_conv(
                &Array2::zeros((3, 7)),
                &build_delayed_matrix(&Array3::zeros((2, 4, 4)), &spec).unwrap()
            ),
            Err(Error::Dimension {
                axis: "weight columns",
                ..
            })
        ));
    }

    #[test]
    fn physical_delay_values() {
        let d = physical_delay(28, 5e9, 1.5e8).unwrap();
        assert!((d.seconds - 5.6e-9).abs() < 1e-21);
        assert!((d.meters - 0.84).abs() < 1e-12);
        let z = physical_delay(0, 5e9, 1.5e8).unwrap();
        assert_eq!((z.seconds, z.meters), (0.0, 0.0));
        assert!(physical_delay(1, 0.0, 1.5e8).is_err());
        assert!(physical_delay(1, -1.0, 1.5e8).is_err());
    }
}
