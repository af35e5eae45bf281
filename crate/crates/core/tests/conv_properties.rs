use ipcnn::conv_math::*;
use ndarray::{Array2, Array3, Array4};
use proptest::prelude::*;

/// Plain nested-loop convolution written independently of the crate.
fn naive_conv(x: &Array3<f64>, w: &Array4<f64>) -> Array3<f64> {
    let (c_in, l, _) = x.dim();
    let (_, c_out, sigma, _) = w.dim();
    let ow = l - sigma + 1;
    let mut y = Array3::zeros((c_out, ow, ow));
    for v in 0..c_out {
        for m in 0..ow {
            for n in 0..ow {
                let mut acc = 0.0;
                for u in 0..c_in {
                    for i in 0..sigma {
                        for j in 0..sigma {
                            acc += w[[u, v, i, j]] * x[[u, m + i, n + j]];
                        }
                    }
                }
                y[[v, m, n]] = acc;
            }
        }
    }
    y
}

fn layer() -> impl Strategy<Value = (ConvLayerSpec, Array3<f64>, Array4<f64>)> {
    (
        1usize..=4,
        1usize..=4,
        prop::sample::select(vec![1usize, 2, 3, 5]),
    )
        .prop_flat_map(|(c_in, c_out, sigma)| (Just(c_in), Just(c_out), Just(sigma), sigma..=10))
        .prop_flat_map(|(c_in, c_out, sigma, l)| {
            (
                Just(ConvLayerSpec::new(c_in, c_out, sigma, l).unwrap()),
                prop::collection::vec(0.0f64..1.0, c_in * l * l),
                prop::collection::vec(-2.0f64..2.0, c_in * c_out * sigma * sigma),
            )
        })
        .prop_map(|(spec, x, w)| {
            let l = spec.image_width;
            (
                spec,
                Array3::from_shape_vec((spec.c_in, l, l), x).unwrap(),
                Array4::from_shape_vec((spec.c_in, spec.c_out, spec.sigma, spec.sigma), w).unwrap(),
            )
        })
}

proptest! {
    #[test]
    fn delayed_gemm_matches_direct_convolution((spec, x, w) in layer()) {
        let delayed = build_delayed_matrix(&x, &spec).unwrap();
        let wm = weight_matrix(&w, &spec).unwrap();
        let got = gemm_conv(&wm, &delayed).unwrap().valid_output();
        let want = naive_conv(&x, &w);
        let scale = want.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        for (a, b) in got.iter().zip(want.iter()) {
            prop_assert!((a - b).abs() / scale <= 1e-12, "{a} vs {b}");
        }
        let reference = conv2d_reference(&x, &w, &spec).unwrap();
        for (a, b) in reference.iter().zip(want.iter()) {
            prop_assert!((a - b).abs() / scale <= 1e-12);
        }
    }

    #[test]
    fn valid_columns_are_im2col((spec, x, _w) in layer()) {
        let delayed = build_delayed_matrix(&x, &spec).unwrap();
        prop_assert_eq!(delayed.valid_submatrix(), im2col(&x, &spec).unwrap());
        prop_assert_eq!(delayed.valid_columns().len(), spec.out_width().pow(2));
        prop_assert_eq!(delayed.data.ncols(), spec.image_width.pow(2) + spec.max_delay());
    }

    #[test]
    fn delay_lines_are_causal_and_reversed((spec, _x, _w) in layer()) {
        let d = delay_offsets(spec.sigma, spec.image_width).unwrap();
        let lines = tap_line_delays(&spec).unwrap();
        let q = spec.taps();
        prop_assert_eq!(d[0], 0);
        prop_assert_eq!(*d.last().unwrap(), spec.max_delay());
        prop_assert!(d.windows(2).all(|p| p[0] < p[1]));
        for k in 0..q {
            prop_assert_eq!(lines[k], d[q - 1 - k]);
        }
    }

    #[test]
    fn serialisation_round_trips(l in 1usize..12, seed in any::<u64>()) {
        let img = Array2::from_shape_fn((l, l), |(m, n)| ((seed ^ (m * 31 + n) as u64) % 997) as f64);
        let seq = serialize(&img.view());
        prop_assert_eq!(seq.len(), l * l);
        prop_assert_eq!(deserialize(&seq, l).unwrap(), img);
    }

    #[test]
    fn weight_matrix_round_trips((spec, _x, w) in layer()) {
        let wm = weight_matrix(&w, &spec).unwrap();
        prop_assert_eq!(wm.dim(), (spec.c_out, spec.rows()));
        prop_assert_eq!(kernels_from_matrix(&wm, &spec).unwrap(), w);
    }

    #[test]
    fn convolution_is_linear((spec, x, w) in layer(), a in -3.0f64..3.0) {
        let delayed = build_delayed_matrix(&x, &spec).unwrap();
        let wm = weight_matrix(&w, &spec).unwrap();
        let y = gemm_conv(&wm, &delayed).unwrap().valid_output();
        let ya = gemm_conv(&(&wm * a), &delayed).unwrap().valid_output();
        for (p, q) in y.iter().zip(ya.iter()) {
            prop_assert!((p * a - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }
}

#[test]
fn reference_offsets_and_valid_count() {
    assert_eq!(
        delay_offsets(3, 6).unwrap(),
        vec![0, 1, 2, 6, 7, 8, 12, 13, 14]
    );
    let spec = ConvLayerSpec::new(1, 1, 3, 6).unwrap();
    assert_eq!(valid_mask(&spec).iter().filter(|v| **v).count(), 16);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let spec = ConvLayerSpec::new(2, 1, 3, 6).unwrap();
    let x = Array3::zeros((1, 6, 6));
    assert!(build_delayed_matrix(&x, &spec).is_err());
    assert!(ConvLayerSpec::new(1, 1, 7, 6).is_err());
    assert!(ConvLayerSpec::new(0, 1, 3, 6).is_err());
    let bad = vec![0; spec.taps()];
    let mut too_far = bad.clone();
    too_far[0] = spec.max_delay() + 1;
    let x = Array3::zeros((2, 6, 6));
    assert!(build_delayed_matrix_with_offsets(&x, &spec, &too_far).is_err());
    assert!(build_delayed_matrix_with_offsets(&x, &spec, &bad[..3]).is_err());
}

#[test]
fn physical_delay_of_one_cycle() {
    let d = physical_delay(1, 5e9, 1.5e8).unwrap();
    assert!((d.seconds - 2e-10).abs() < 1e-24);
    assert!((d.meters - 0.03).abs() < 1e-15);
    assert!(physical_delay(1, 0.0, 1.5e8).is_err());
}
