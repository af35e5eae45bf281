//! End-to-end acceptance gates. Each gate prints one PASS/FAIL line; the
//! test fails if any gate fails.
//!
//! Gates 8 and 9 need the MNIST IDX files (see `scripts/fetch_mnist.sh`).

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ipcnn::conv_math::{delay_offsets, valid_mask, ConvLayerSpec};
use ipcnn::design_space::*;
use ipcnn::equivalence::{verify_equivalence, EquivalenceConfig};
use ipcnn::nn::gradcheck::check_all;
use ipcnn::nn::infer::{first_n, predict_digital};
use ipcnn::nn::*;
use ipcnn::optics::{nonlinear_coefficient, NoiseBudget};
use ipcnn::photonic::{apply_calibration, calibrate, AnalogFaultModel, PhotonicConvLayer};
use ipcnn::rng::{derive_seed, rng_from};
use ipcnn::stats::{mean, BoxStats};

const SEED: u64 = 2024;
const SUBSET: usize = 1000;
const TRAIN_BUDGET: Duration = Duration::from_secs(15 * 60);

type Gate = Result<String, String>;

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn report(line: &str) {
    // Bypasses libtest capture so the lines show up in plain `cargo test`.
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn gate(id: &str, name: &str, f: impl FnOnce() -> Gate) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            report(&format!("PASS {id:<3} {name}: {detail} [{secs:.1}s]"));
            true
        }
        Err(detail) => {
            report(&format!("FAIL {id:<3} {name}: {detail} [{secs:.1}s]"));
            false
        }
    }
}

struct Trained {
    data: Mnist,
    network: Network,
    train_time: Duration,
}

fn trained() -> Result<&'static Trained, String> {
    static MODEL: OnceLock<Result<Trained, String>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let dir = mnist::default_mnist_dir();
            let data = load_mnist(&dir)
                .map_err(|e| format!("MNIST unavailable in {}: {e}", dir.display()))?;
            let hp = Hyperparams {
                epochs: 3,
                ..Hyperparams::default()
            };
            let start = Instant::now();
            let (network, _) = train(
                NetworkShape::default(),
                &data.train,
                &hp,
                SEED,
                &mut |log| {
                    report(&format!(
                        "     training epoch {}: loss {:.4}, train accuracy {:.4} ({:.0?})",
                        log.epoch,
                        log.mean_loss,
                        log.train_accuracy,
                        start.elapsed()
                    ))
                },
            )
            .map_err(|e| e.to_string())?;
            Ok(Trained {
                data,
                network,
                train_time: start.elapsed(),
            })
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn criterion_1() -> Gate {
    let cfg = EquivalenceConfig::default();
    ensure(
        cfg.instances >= 200 && cfg.max_channels <= 8 && cfg.max_width <= 16,
        "config too small",
    )?;
    let start = Instant::now();
    let r = verify_equivalence(&cfg, SEED, false).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    ensure(r.passed(), format!("mismatch {:?}", r.failure))?;
    ensure(
        r.max_relative_error <= 1e-12,
        format!("max relative error {:e}", r.max_relative_error),
    )?;
    ensure(t < Duration::from_secs(10), format!("took {t:?}"))?;
    let corrupted = verify_equivalence(&cfg, SEED, true).map_err(|e| e.to_string())?;
    ensure(
        corrupted.failure.is_some(),
        "corrupted offsets were not detected",
    )?;
    Ok(format!(
        "{} instances, max rel err {:.2e}, {:.2}s",
        r.instances,
        r.max_relative_error,
        t.as_secs_f64()
    ))
}

fn criterion_2() -> Gate {
    let d = delay_offsets(3, 6).map_err(|e| e.to_string())?;
    ensure(
        d == vec![0, 1, 2, 6, 7, 8, 12, 13, 14],
        format!("offsets {d:?}"),
    )?;
    let spec = ConvLayerSpec::new(1, 1, 3, 6).map_err(|e| e.to_string())?;
    let valid = valid_mask(&spec).iter().filter(|v| **v).count();
    ensure(valid == 16, format!("{valid} valid columns"))?;
    Ok(format!("offsets {d:?}, {valid} valid columns"))
}

fn criterion_3() -> Gate {
    let neop = NoiseBudget {
        pd_noise_w_per_rthz: 30e-12,
        pd_responsivity: 0.9,
        tia_noise_a_per_rthz: 50e-12,
        bandwidth_hz: 10e9,
    }
    .aggregate_neop()
    .map_err(|e| e.to_string())?;
    ensure(rel(neop, 6.3e-6) <= 0.02, format!("NEOP {neop:e} W"))?;
    Ok(format!("NEOP {:.3} uW", neop * 1e6))
}

fn criterion_4() -> Gate {
    let a = max_scale(0.1, 7.4, 6.3e-6, 10.0, 288).map_err(|e| e.to_string())?;
    let b = max_scale(0.1, 6.4, 6.3e-6, 10.0, 288).map_err(|e| e.to_string())?;
    ensure(
        a.scale == 288 && a.feasible,
        format!("7.4 dB scale {}", a.scale),
    )?;
    ensure(b.scale == 363, format!("6.4 dB scale {}", b.scale))?;
    Ok(format!("7.4 dB -> {}, 6.4 dB -> {}", a.scale, b.scale))
}

fn criterion_5() -> Gate {
    let cfg = HardwareConfig::default();
    ensure(
        (cfg.c_in, cfg.c_out, cfg.taps(), cfg.mod_rate_hz) == (64, 32, 9, 5e9),
        "unexpected defaults",
    )?;
    let nominal = cfg.nominal_mac_rate();
    ensure(nominal == 92.16e12, format!("nominal {nominal:e}"))?;
    let rates: Vec<f64> = (1..=20).map(|k| k as f64 * 1e9).collect();
    for loss in [0.1, 1.0, 10.0] {
        let curve = speed_curve(
            &HardwareConfig {
                delay_line_loss_db_per_m: loss,
                ..cfg.clone()
            },
            &rates,
        )
        .map_err(|e| e.to_string())?;
        ensure(
            curve.windows(2).all(|w| w[1].mac_per_s >= w[0].mac_per_s),
            format!("curve at {loss} dB/m not monotone"),
        )?;
        ensure(
            curve.iter().all(|p| p.mac_per_s <= p.lossless_mac_per_s),
            format!("curve at {loss} dB/m exceeds lossless reference"),
        )?;
    }
    Ok(format!(
        "{:.2} TMAC/s; curves monotone and bounded",
        nominal / 1e12
    ))
}

fn criterion_6() -> Gate {
    let cfg = HardwareConfig::default();
    let b = energy_budget(Architecture::Ipcnn, &cfg).map_err(|e| e.to_string())?;
    for (name, got, want, tol) in [
        ("weighting", b.weighting_w, 359.4, 1e-3),
        ("E/O", b.eo_w, 5.76, 1e-3),
        ("TIA", b.tia_w, 0.63, 0.02),
        ("ADC", b.adc_w, 0.16, 1e-3),
        ("lasers", b.lasers_w, 7.96, 0.05),
    ] {
        ensure(
            rel(got, want) <= tol,
            format!("IPCNN {name} {got} W vs {want} W"),
        )?;
    }
    let get = |a| energy_budget(a, &cfg).map_err(|e| e.to_string());
    let (bw, coh, deap) = (
        get(Architecture::Bw)?,
        get(Architecture::Coherent)?,
        get(Architecture::Deap)?,
    );
    for (name, got, want) in [
        ("BW weighting", bw.weighting_w, 39.93),
        ("Coherent weighting", coh.weighting_w, 359.4),
        ("Coherent E/O", coh.eo_w, 51.8),
        ("DEAP weighting", deap.weighting_w, 11.23),
    ] {
        ensure(
            rel(got, want) <= 0.01,
            format!("{name} {got} W vs {want} W"),
        )?;
    }
    let cap = efficiency(&b, b.mac_per_s, WeightingMode::Capacitive).map_err(|e| e.to_string())?;
    ensure(
        (0.14..=0.20).contains(&cap),
        format!("capacitive {cap} pJ/MAC"),
    )?;
    for arch in Architecture::ALL {
        let x = get(arch)?;
        let th = efficiency(&x, x.mac_per_s, WeightingMode::Thermal).map_err(|e| e.to_string())?;
        ensure(th > 1.0, format!("{} thermal {th} pJ/MAC", arch.name()))?;
    }
    Ok(format!(
        "IPCNN weighting {:.1} W, capacitive {cap:.3} pJ/MAC",
        b.weighting_w
    ))
}

fn criterion_7() -> Gate {
    let g1 = nonlinear_coefficient(2.4e-19, 1550e-9, 0.702e-12).map_err(|e| e.to_string())?;
    let g2 = nonlinear_coefficient(2.4e-19, 1550e-9, 1.599e-12).map_err(|e| e.to_string())?;
    ensure(rel(g1, 2.77) <= 0.01, format!("gamma(0.702) = {g1}"))?;
    ensure(rel(g2, 1.21) <= 0.01, format!("gamma(1.599) = {g2}"))?;
    Ok(format!("{g1:.3} and {g2:.3} rad/W/m"))
}

fn noise_means(t: &Trained, subset: &[usize], levels: &[Option<f64>]) -> Result<Vec<f64>, String> {
    let seeds: Vec<u64> = (0..5).map(|s| derive_seed(SEED, &[0x8C, s])).collect();
    let s = sweep_noise(
        &t.network,
        &t.data.test,
        subset,
        levels,
        &seeds,
        &FaultConfig::disabled(),
    )
    .map_err(|e| e.to_string())?;
    Ok(s.iter().map(|l| l.mean_accuracy).collect())
}

fn criterion_8() -> Vec<bool> {
    let mut out = Vec::new();
    out.push(gate("8a", "digital reference accuracy", || {
        let t = trained()?;
        let acc = evaluate(&t.network, &t.data.test, &[]).map_err(|e| e.to_string())?;
        ensure(acc >= 0.975, format!("test accuracy {acc:.4}"))?;
        ensure(
            t.train_time <= TRAIN_BUDGET,
            format!("training took {:?}", t.train_time),
        )?;
        Ok(format!(
            "test accuracy {acc:.4}, trained in {:.0}s",
            t.train_time.as_secs_f64()
        ))
    }));
    out.push(gate("8b", "ideal hybrid equals digital argmax", || {
        let t = trained()?;
        let all = first_n(&t.data.test, t.data.test.len());
        let digital = predict_digital(&t.network, &t.data.test, &all).map_err(|e| e.to_string())?;
        let backend = PhotonicBackend::build(&t.network, &FaultConfig::disabled(), SEED)
            .map_err(|e| e.to_string())?;
        let hybrid = backend
            .predict(&t.network, &t.data.test, &all)
            .map_err(|e| e.to_string())?;
        let diff = digital.iter().zip(&hybrid).filter(|(a, b)| a != b).count();
        ensure(diff == 0, format!("{diff} of {} samples differ", all.len()))?;
        Ok(format!("{} samples identical", all.len()))
    }));
    out.push(gate(
        "8c",
        "accuracy at -10 dBc within 1.5 pp of clean",
        || {
            let t = trained()?;
            let subset = first_n(&t.data.test, SUBSET);
            let clean = infer_digital(&t.network, &t.data.test, &subset)
                .map_err(|e| e.to_string())?
                .accuracy;
            let noisy = noise_means(t, &subset, &[Some(-10.0)])?[0];
            let detail = format!("clean {clean:.4}, -10 dBc mean {noisy:.4} over 5 seeds");
            ensure(noisy >= clean - 0.015, detail.clone())?;
            Ok(detail)
        },
    ));
    out.push(gate("8d", "accuracy at -3 dBc below -10 dBc", || {
        let t = trained()?;
        let subset = first_n(&t.data.test, SUBSET);
        let m = noise_means(t, &subset, &[Some(-10.0), Some(-3.0)])?;
        let detail = format!("-10 dBc {:.4}, -3 dBc {:.4}", m[0], m[1]);
        ensure(m[1] < m[0], detail.clone())?;
        Ok(detail)
    }));
    out
}

fn criterion_9() -> Vec<bool> {
    let mut out = Vec::new();
    out.push(gate("9a", "noiseless calibration is exact", || {
        let t = trained()?;
        let subset = first_n(&t.data.test, SUBSET);
        let clean = infer_digital(&t.network, &t.data.test, &subset)
            .map_err(|e| e.to_string())?
            .accuracy;
        let conv = &t.network.conv2;
        let spec = conv.spec;
        let prog =
            ipcnn::photonic::program_weights(&conv.kernels().map_err(|e| e.to_string())?, &spec)
                .map_err(|e| e.to_string())?;
        let mut rng = rng_from(SEED, &[0x9A]);
        let input =
            ndarray::Array3::from_shape_fn((spec.c_in, spec.image_width, spec.image_width), |_| {
                rand::Rng::random::<f64>(&mut rng)
            });
        let ideal = PhotonicConvLayer::new(prog.clone(), AnalogFaultModel::ideal(&spec))
            .and_then(|l| l.forward(&input, &mut rng_from(0, &[])))
            .map_err(|e| e.to_string())?;
        let peak = ideal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst: f64 = 0.0;
        for level in [2.0, 6.0, 10.0] {
            let cal = FaultConfig {
                imbalance_db: level,
                calibration: true,
                ..FaultConfig::disabled()
            };
            for trial in 0..20u64 {
                let seed = derive_seed(SEED, &[0x9A, trial]);
                let faults = AnalogFaultModel::sampled(&spec, None, level, seed)
                    .map_err(|e| e.to_string())?;
                let layer =
                    PhotonicConvLayer::new(prog.clone(), faults).map_err(|e| e.to_string())?;
                let table = calibrate(&layer, 1, seed).map_err(|e| e.to_string())?;
                let fixed = layer
                    .reprogram(
                        apply_calibration(layer.programming(), &table)
                            .map_err(|e| e.to_string())?,
                    )
                    .and_then(|l| l.forward(&input, &mut rng_from(0, &[])))
                    .map_err(|e| e.to_string())?;
                for (a, b) in fixed.iter().zip(ideal.iter()) {
                    worst = worst.max((a - b).abs() / peak);
                }
                let acc = infer_hybrid(&t.network, &t.data.test, &subset, &cal, seed)
                    .map_err(|e| e.to_string())?
                    .accuracy;
                ensure(
                    acc == clean,
                    format!("{level} dB trial {trial}: calibrated {acc} vs clean {clean}"),
                )?;
            }
        }
        ensure(
            worst <= 1e-9,
            format!("max relative output error {worst:e}"),
        )?;
        Ok(format!(
            "60 trials: outputs within {worst:.1e}, accuracy {clean:.4} = clean"
        ))
    }));
    out.push(gate("9b", "calibration fails at medium noise", || {
        let t = trained()?;
        let subset = first_n(&t.data.test, SUBSET);
        let median = |dbc: f64| -> Result<f64, String> {
            let base = FaultConfig {
                calibration: true,
                ..FaultConfig::noise(dbc)
            };
            let s = sweep_imbalance(
                &t.network,
                &t.data.test,
                &subset,
                &[10.0],
                30,
                &base,
                derive_seed(SEED, &[0x9B]),
            )
            .map_err(|e| e.to_string())?;
            Ok(s[0].stats.median)
        };
        let low = median(-25.0)?;
        let mid = median(-10.0)?;
        let detail =
            format!("10 dB imbalance, calibrated medians: -25 dBc {low:.4}, -10 dBc {mid:.4}");
        ensure(mid < low, detail.clone())?;
        Ok(detail)
    }));
    out
}

fn criterion_10() -> Gate {
    let r = check_all(SEED).map_err(|e| e.to_string())?;
    let worst = r.max_relative_error();
    for e in &r.entries {
        ensure(e.checked > 0, format!("{} checked nothing", e.name))?;
    }
    ensure(worst < 1e-4, format!("max relative error {worst:e}"))?;
    Ok(format!(
        "{} gradient groups, max rel err {worst:.2e}",
        r.entries.len()
    ))
}

fn criterion_11() -> Gate {
    fn bytes<T: serde::Serialize>(v: &T) -> Vec<u8> {
        serde_json::to_vec(v).expect("serialisable")
    }
    let in_pool = |threads: usize, f: &(dyn Fn() -> Vec<u8> + Sync)| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("pool")
            .install(f)
    };
    let eq = || bytes(&verify_equivalence(&EquivalenceConfig::default(), SEED, false).unwrap());
    ensure(
        in_pool(1, &eq) == in_pool(3, &eq),
        "equivalence report differs",
    )?;

    let design = || {
        let cfg = HardwareConfig::default();
        let rates: Vec<f64> = (1..=20).map(|k| k as f64 * 1e9).collect();
        let budgets: Vec<_> = Architecture::ALL
            .iter()
            .map(|&a| energy_budget(a, &cfg).unwrap())
            .collect();
        bytes(&(speed_curve(&cfg, &rates).unwrap(), budgets))
    };
    ensure(design() == design(), "design-space tables differ")?;

    let t = trained()?;
    let subset = first_n(&t.data.test, 200);
    let faults = FaultConfig {
        imbalance_db: 6.0,
        calibration: true,
        ..FaultConfig::noise(-15.0)
    };
    let infer = || bytes(&infer_hybrid(&t.network, &t.data.test, &subset, &faults, SEED).unwrap());
    ensure(
        in_pool(1, &infer) == in_pool(4, &infer),
        "hybrid reports differ across thread counts",
    )?;
    let sweep = || {
        let s = sweep_imbalance(
            &t.network,
            &t.data.test,
            &subset,
            &[0.0, 4.0],
            3,
            &FaultConfig::disabled(),
            SEED,
        )
        .unwrap();
        bytes(&s)
    };
    ensure(
        in_pool(1, &sweep) == in_pool(2, &sweep),
        "imbalance sweep differs",
    )?;

    let hp = Hyperparams {
        epochs: 1,
        max_train_samples: Some(256),
        ..Hyperparams::default()
    };
    let ckpt = || {
        let (network, metadata) = train(
            NetworkShape::default(),
            &t.data.train,
            &hp,
            SEED,
            &mut |_| {},
        )
        .unwrap();
        TrainedModel { network, metadata }.to_bytes().unwrap()
    };
    ensure(
        in_pool(1, &ckpt) == in_pool(2, &ckpt),
        "checkpoint bytes differ",
    )?;
    let stats = BoxStats::from_samples(&[0.5, 0.25, 1.0]).ok_or("empty stats")?;
    ensure(mean(&[stats.min, stats.max]) == 0.625, "stats")?;
    Ok("equivalence, design tables, inference, sweeps and checkpoints byte-identical".into())
}

#[test]
fn acceptance() {
    let mut results = vec![
        gate("1", "delay-GeMM equivalence", criterion_1),
        gate("2", "delay offsets", criterion_2),
        gate("3", "NEOP reconstruction", criterion_3),
        gate("4", "scale point", criterion_4),
        gate("5", "speed headline", criterion_5),
        gate("6", "energy tables", criterion_6),
        gate("7", "nonlinear coefficients", criterion_7),
    ];
    results.extend(criterion_8());
    results.extend(criterion_9());
    results.push(gate("10", "gradient checks", criterion_10));
    results.push(gate("11", "determinism", criterion_11));
    let failed = results.iter().filter(|ok| !**ok).count();
    report(&format!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    ));
    assert_eq!(failed, 0, "{failed} acceptance gate(s) failed");
}
