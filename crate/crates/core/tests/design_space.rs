use ipcnn::design_space::*;
use ipcnn::optics::nonlinear_coefficient;
use proptest::prelude::*;

proptest! {
    #[test]
    fn scale_never_grows_with_loss_or_noise(
        cap in 1e-3f64..1.0,
        loss in 0.0f64..15.0,
        extra_loss in 0.0f64..5.0,
        neop in 1e-7f64..1e-4,
        neop_factor in 1.0f64..4.0,
        snr in 1.0f64..100.0,
    ) {
        let base = max_scale(cap, loss, neop, snr, 288).unwrap();
        let lossier = max_scale(cap, loss + extra_loss, neop, snr, 288).unwrap();
        let noisier = max_scale(cap, loss, neop * neop_factor, snr, 288).unwrap();
        prop_assert!(lossier.scale <= base.scale);
        prop_assert!(noisier.scale <= base.scale);
        prop_assert_eq!(base.feasible, base.scale >= 288);
        let ratio = cap * 10f64.powf(-loss / 10.0) / (snr * neop);
        prop_assert!(base.scale as f64 <= ratio * (1.0 + 1e-9));
        prop_assert!(base.scale as f64 > ratio - 1.0 - 1e-9 * ratio);
    }

    #[test]
    fn speed_curve_is_monotone_and_bounded(loss_db_per_m in 0.0f64..20.0) {
        let cfg = HardwareConfig {
            delay_line_loss_db_per_m: loss_db_per_m,
            ..HardwareConfig::default()
        };
        let rates: Vec<f64> = (1..=20).map(|k| k as f64 * 1e9).collect();
        let curve = speed_curve(&cfg, &rates).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].mac_per_s >= w[0].mac_per_s);
            prop_assert!(w[1].delay_loss_db <= w[0].delay_loss_db);
        }
        for p in &curve {
            prop_assert!(p.mac_per_s <= p.lossless_mac_per_s);
            prop_assert!(p.effective_c_out <= cfg.c_out);
        }
    }

    #[test]
    fn budgets_scale_with_device_power(factor in 0.1f64..10.0) {
        let base = HardwareConfig::default();
        let scaled = HardwareConfig {
            mrr_power_w: base.mrr_power_w * factor,
            ..base.clone()
        };
        for arch in Architecture::ALL {
            let a = energy_budget(arch, &base).unwrap();
            let b = energy_budget(arch, &scaled).unwrap();
            prop_assert!((b.weighting_w - a.weighting_w * factor).abs() <= 1e-9 * b.weighting_w.max(1.0));
            prop_assert_eq!(a.tia_w, b.tia_w);
            prop_assert_eq!(a.mac_per_s, b.mac_per_s);
            prop_assert!((a.ratios.sum() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn headline_numbers() {
    let cfg = HardwareConfig::default();
    assert_eq!(max_scale(0.1, 7.4, 6.3e-6, 10.0, 288).unwrap().scale, 288);
    assert_eq!(max_scale(0.1, 6.4, 6.3e-6, 10.0, 288).unwrap().scale, 363);
    assert_eq!(cfg.nominal_mac_rate(), 92.16e12);
    assert_eq!(speed(&cfg).unwrap(), 92.16e12);
    let cap = efficiency(
        &energy_budget_ipcnn(&cfg).unwrap(),
        92.16e12,
        WeightingMode::Capacitive,
    )
    .unwrap();
    assert!((0.14..=0.20).contains(&cap));
    for arch in Architecture::ALL {
        let b = energy_budget(arch, &cfg).unwrap();
        assert!(
            efficiency(&b, b.mac_per_s, WeightingMode::Thermal).unwrap()
                > ELECTRONIC_REFERENCE_PJ_PER_MAC
        );
    }
}

#[test]
fn lossless_rate_doubles_with_channels() {
    let cfg = HardwareConfig {
        delay_line_loss_db_per_m: 0.0,
        c_in: 32,
        ..HardwareConfig::default()
    };
    let wide = HardwareConfig {
        c_in: 64,
        ..cfg.clone()
    };
    assert_eq!(speed(&wide).unwrap(), 2.0 * speed(&cfg).unwrap());
}

#[test]
fn gamma_follows_inverse_mode_area() {
    let g = |a: f64| nonlinear_coefficient(2.4e-19, 1550e-9, a).unwrap();
    assert!((g(0.702e-12) - 2.77).abs() / 2.77 < 0.01);
    assert!((g(1.599e-12) - 1.21).abs() / 1.21 < 0.01);
    assert!((g(0.702e-12) * 0.702 - g(1.599e-12) * 1.599).abs() < 1e-12);
}

#[test]
fn invalid_inputs_are_errors() {
    assert!(max_scale(0.1, -1.0, 6.3e-6, 10.0, 1).is_err());
    assert!(max_scale(0.1, 1.0, 0.0, 10.0, 1).is_err());
    let bad = HardwareConfig {
        wall_plug_efficiency: 2.0,
        ..HardwareConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(energy_budget_comparative("unknown", &HardwareConfig::default()).is_err());
}
