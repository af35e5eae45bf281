use std::path::PathBuf;
use std::time::Instant;

use ipcnn::design_space::{
    efficiency, energy_budget, max_scale, speed_curve, Architecture, HardwareConfig,
    LimitingFactor, WeightingMode, ELECTRONIC_REFERENCE_PJ_PER_MAC,
};
use ipcnn::equivalence::verify_equivalence;
use ipcnn::nn::gradcheck::check_all;
use ipcnn::nn::infer::first_n;
use ipcnn::nn::{
    evaluate, infer_digital, infer_hybrid, load_mnist, mnist, sweep_imbalance, sweep_noise,
    FaultConfig, Mnist, TrainedModel,
};
use ipcnn::optics::NoiseBudget;
use ipcnn::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::Output;

/// Gradient checks must agree with finite differences to this level
/// before full training starts.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: Output,
}

impl Context {
    fn mnist_dir(&self) -> PathBuf {
        self.cfg
            .dataset
            .mnist_dir
            .clone()
            .unwrap_or_else(mnist::default_mnist_dir)
    }

    fn load_mnist(&self) -> Result<Mnist, CliError> {
        let dir = self.mnist_dir();
        load_mnist(&dir).map_err(|e| match e {
            ipcnn::Error::Io(io) => CliError::Io(format!("MNIST files in {}: {io}", dir.display())),
            other => other.into(),
        })
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.cfg
            .inference
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out.path("model.ckpt"))
    }

    fn load_model(&self) -> Result<(TrainedModel, String), CliError> {
        let path = self.checkpoint_path();
        let model = TrainedModel::load(&path).map_err(|e| match e {
            ipcnn::Error::Io(io) => CliError::Io(format!("checkpoint {}: {io}", path.display())),
            other => other.into(),
        })?;
        let hash = model.hash()?;
        Ok((model, hash))
    }
}

pub fn verify_equivalence_cmd(ctx: &Context, corrupt_offsets: bool) -> Result<(), CliError> {
    let report = verify_equivalence(&ctx.cfg.equivalence, ctx.cfg.seed, corrupt_offsets)?;
    ctx.out.summary(
        "equivalence.json",
        "verify-equivalence",
        None,
        vec![],
        &report,
    )?;
    match &report.failure {
        None => {
            println!(
                "PASS: {} instances, max relative error {:.3e}, digest {}",
                report.instances, report.max_relative_error, report.digest
            );
            Ok(())
        }
        Some(m) => Err(CliError::Failure(format!(
            "FAIL: instance {} (c_in={}, c_out={}, sigma={}, L={}): first {} mismatch at (row {}, column {}): expected {}, got {}",
            m.instance,
            m.spec.c_in,
            m.spec.c_out,
            m.spec.sigma,
            m.spec.image_width,
            m.stage,
            m.row,
            m.column,
            m.expected,
            m.actual
        ))),
    }
}

#[derive(Serialize)]
struct TrainResults {
    gradcheck_max_relative_error: f64,
    train_samples: usize,
    test_accuracy: f64,
    checkpoint: String,
    metadata: ipcnn::nn::TrainingMetadata,
}

pub fn train_cmd(ctx: &Context) -> Result<(), CliError> {
    let grad = check_all(ctx.cfg.seed)?;
    let worst = grad.max_relative_error();
    eprintln!("gradient check: max relative error {worst:.3e}");
    if !(worst < GRADCHECK_TOLERANCE) {
        return Err(CliError::Failure(format!(
            "gradient check failed: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )));
    }
    let data = ctx.load_mnist()?;
    let start = Instant::now();
    let (network, mut metadata) = ipcnn::nn::train(
        ctx.cfg.network,
        &data.train,
        &ctx.cfg.training,
        ctx.cfg.seed,
        &mut |log| {
            eprintln!(
                "epoch {}: loss {:.5}, train accuracy {:.4} ({:.0?})",
                log.epoch,
                log.mean_loss,
                log.train_accuracy,
                start.elapsed()
            )
        },
    )?;
    let test_accuracy = evaluate(&network, &data.test, &[])?;
    metadata.final_test_accuracy = Some(test_accuracy);
    eprintln!("test accuracy {test_accuracy:.4}");
    let model = TrainedModel { network, metadata };
    let path = ctx.checkpoint_path();
    model.save(&path)?;
    let hash = model.hash()?;
    let log = ctx.out.csv("train_log.csv", &model.metadata.epochs)?;
    let results = TrainResults {
        gradcheck_max_relative_error: worst,
        train_samples: model.metadata.train_samples,
        test_accuracy,
        checkpoint: match &ctx.cfg.inference.checkpoint {
            Some(p) => p.display().to_string(),
            None => "model.ckpt".into(),
        },
        metadata: model.metadata.clone(),
    };
    ctx.out
        .summary("train.json", "train", Some(&hash), vec![log], &results)?;
    println!(
        "test accuracy {test_accuracy:.4}; checkpoint {} ({hash})",
        path.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ConfusionRow {
    mode: String,
    label: usize,
    prediction: usize,
    count: usize,
}

#[derive(Serialize)]
struct InferResults {
    digital: ipcnn::nn::InferenceReport,
    hybrid: ipcnn::nn::InferenceReport,
}

pub fn infer_cmd(ctx: &Context) -> Result<(), CliError> {
    let (model, hash) = ctx.load_model()?;
    let data = ctx.load_mnist()?;
    let subset = match ctx.cfg.inference.subset_size {
        Some(n) => first_n(&data.test, n),
        None => first_n(&data.test, data.test.len()),
    };
    let net = &model.network;
    let digital = infer_digital(net, &data.test, &subset)?;
    let hybrid = infer_hybrid(net, &data.test, &subset, &ctx.cfg.faults, ctx.cfg.seed)?;
    let mut rows = Vec::new();
    for (mode, report) in [("digital", &digital), ("hybrid", &hybrid)] {
        for (label, row) in report.confusion.iter().enumerate() {
            for (prediction, &count) in row.iter().enumerate() {
                rows.push(ConfusionRow {
                    mode: mode.into(),
                    label,
                    prediction,
                    count,
                });
            }
        }
    }
    let file = ctx.out.csv("confusion.csv", &rows)?;
    println!(
        "digital accuracy {:.4}, hybrid accuracy {:.4} on {} samples",
        digital.accuracy, hybrid.accuracy, digital.total
    );
    ctx.out.summary(
        "infer.json",
        "infer",
        Some(&hash),
        vec![file],
        &InferResults { digital, hybrid },
    )
}

/// One `(level, seed)` point; `neop_dbc = -inf` is the noiseless level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub neop_dbc: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummaryRow {
    pub neop_dbc: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub seeds: usize,
}

#[derive(Serialize)]
struct NoiseResults {
    clean_accuracy: f64,
    subset_size: usize,
    levels: Vec<NoiseSummaryRow>,
}

pub fn sweep_noise_cmd(ctx: &Context) -> Result<(), CliError> {
    let (model, hash) = ctx.load_model()?;
    let data = ctx.load_mnist()?;
    let sc = &ctx.cfg.sweep_noise;
    let subset = first_n(&data.test, sc.subset_size);
    let mut levels: Vec<Option<f64>> = Vec::new();
    if sc.include_noiseless {
        levels.push(None);
    }
    levels.extend(sc.levels_dbc.iter().map(|&l| Some(l)));
    let mut seeds = sc.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let derived: Vec<u64> = seeds
        .iter()
        .map(|&s| derive_seed(ctx.cfg.seed, &[s]))
        .collect();
    let net = &model.network;
    let clean = infer_digital(net, &data.test, &subset)?.accuracy;
    let summaries = sweep_noise(net, &data.test, &subset, &levels, &derived, &ctx.cfg.faults)?;
    let mut rows = Vec::new();
    let mut summary_rows = Vec::new();
    for s in &summaries {
        let level = s.neop_dbc.unwrap_or(f64::NEG_INFINITY);
        for (seed, r) in seeds.iter().zip(&s.reports) {
            rows.push(NoiseRow {
                neop_dbc: level,
                seed: *seed,
                accuracy: r.accuracy,
                correct: r.correct,
                total: r.total,
            });
        }
        let acc: Vec<f64> = s.reports.iter().map(|r| r.accuracy).collect();
        summary_rows.push(NoiseSummaryRow {
            neop_dbc: level,
            mean_accuracy: s.mean_accuracy,
            std_accuracy: s.std_accuracy,
            min_accuracy: acc.iter().cloned().fold(f64::INFINITY, f64::min),
            max_accuracy: acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            seeds: acc.len(),
        });
        eprintln!("neop {level} dBc: mean accuracy {:.4}", s.mean_accuracy);
    }
    let files = vec![
        ctx.out.csv("sweep_noise.csv", &rows)?,
        ctx.out.csv("sweep_noise_summary.csv", &summary_rows)?,
    ];
    ctx.out.summary(
        "sweep_noise.json",
        "sweep-noise",
        Some(&hash),
        files,
        &NoiseResults {
            clean_accuracy: clean,
            subset_size: subset.len(),
            levels: summary_rows.clone(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceTrialRow {
    pub imbalance_db: f64,
    pub trial: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceBoxRow {
    pub imbalance_db: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub trials: usize,
}

#[derive(Serialize)]
struct ImbalanceResults {
    clean_accuracy: f64,
    subset_size: usize,
    calibration: bool,
    neop_dbc: Option<f64>,
    levels: Vec<ImbalanceBoxRow>,
}

pub fn sweep_imbalance_cmd(ctx: &Context) -> Result<(), CliError> {
    let (model, hash) = ctx.load_model()?;
    let data = ctx.load_mnist()?;
    let sc = &ctx.cfg.sweep_imbalance;
    let subset = first_n(&data.test, sc.subset_size);
    let mut levels = sc.levels_db.clone();
    levels.sort_by(|a, b| a.total_cmp(b));
    let base = FaultConfig {
        neop_dbc: sc.neop_dbc,
        calibration: sc.calibration,
        ..ctx.cfg.faults
    };
    let net = &model.network;
    let clean = infer_digital(net, &data.test, &subset)?.accuracy;
    let summaries = sweep_imbalance(
        net,
        &data.test,
        &subset,
        &levels,
        sc.trials,
        &base,
        ctx.cfg.seed,
    )?;
    let mut trials = Vec::new();
    let mut boxes = Vec::new();
    for s in &summaries {
        for (t, (&seed, &acc)) in s.trial_seeds.iter().zip(&s.accuracies).enumerate() {
            trials.push(ImbalanceTrialRow {
                imbalance_db: s.imbalance_db,
                trial: t,
                seed,
                accuracy: acc,
            });
        }
        let b = s.stats;
        boxes.push(ImbalanceBoxRow {
            imbalance_db: s.imbalance_db,
            min: b.min,
            q1: b.q1,
            median: b.median,
            q3: b.q3,
            max: b.max,
            mean: b.mean,
            trials: b.count,
        });
        eprintln!(
            "imbalance {} dB: median accuracy {:.4}",
            s.imbalance_db, b.median
        );
    }
    let files = vec![
        ctx.out.csv("sweep_imbalance_trials.csv", &trials)?,
        ctx.out.csv("sweep_imbalance.csv", &boxes)?,
    ];
    ctx.out.summary(
        "sweep_imbalance.json",
        "sweep-imbalance",
        Some(&hash),
        files,
        &ImbalanceResults {
            clean_accuracy: clean,
            subset_size: subset.len(),
            calibration: sc.calibration,
            neop_dbc: sc.neop_dbc,
            levels: boxes.clone(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub neop_w: f64,
    pub loss_db: f64,
    pub scale: u64,
    pub requested: u64,
    pub feasible: bool,
    pub limiting: LimitingFactor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedRow {
    pub delay_loss_db_per_m: f64,
    pub mod_rate_hz: f64,
    pub delay_line_length_m: f64,
    pub delay_loss_db: f64,
    pub total_loss_db: f64,
    pub scale: u64,
    pub effective_c_out: usize,
    pub mac_per_s: f64,
    pub lossless_mac_per_s: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub architecture: String,
    pub subsystem: String,
    pub power_w: f64,
    pub ratio: f64,
    pub ratio_without_weighting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub architecture: String,
    pub weighting: String,
    pub power_w: f64,
    pub mac_per_s: f64,
    pub pj_per_mac: f64,
    pub electronic_reference_pj_per_mac: f64,
}

#[derive(Serialize)]
struct EnergyHeadline {
    laser_optical_w: f64,
    ipcnn_weighting_w: f64,
    ipcnn_capacitive_pj_per_mac: f64,
    ipcnn_thermal_pj_per_mac: f64,
    mac_per_s: f64,
}

fn energy_tables(
    hw: &HardwareConfig,
) -> Result<(Vec<BudgetRow>, Vec<EfficiencyRow>, EnergyHeadline), CliError> {
    let mut budget_rows = Vec::new();
    let mut eff_rows = Vec::new();
    let mut headline = None;
    for arch in Architecture::ALL {
        let b = energy_budget(arch, hw)?;
        let ratios = [
            b.ratios.lasers,
            b.ratios.eo,
            b.ratios.weighting,
            b.ratios.tia,
            b.ratios.adc,
        ];
        let without = &b.ratios_without_weighting;
        let ratios_wo = [
            without.lasers,
            without.eo,
            without.weighting,
            without.tia,
            without.adc,
        ];
        for (((name, w), r), rw) in b.rows().iter().zip(ratios).zip(ratios_wo) {
            budget_rows.push(BudgetRow {
                architecture: arch.name().into(),
                subsystem: (*name).into(),
                power_w: *w,
                ratio: r,
                ratio_without_weighting: rw,
            });
        }
        budget_rows.push(BudgetRow {
            architecture: arch.name().into(),
            subsystem: "total".into(),
            power_w: b.total_w,
            ratio: b.ratios.sum(),
            ratio_without_weighting: without.sum(),
        });
        for mode in WeightingMode::ALL {
            let pj = efficiency(&b, b.mac_per_s, mode)?;
            eff_rows.push(EfficiencyRow {
                architecture: arch.name().into(),
                weighting: mode.name().into(),
                power_w: pj * 1e-12 * b.mac_per_s,
                mac_per_s: b.mac_per_s,
                pj_per_mac: pj,
                electronic_reference_pj_per_mac: ELECTRONIC_REFERENCE_PJ_PER_MAC,
            });
        }
        if arch == Architecture::Ipcnn {
            headline = Some(EnergyHeadline {
                laser_optical_w: b.laser_optical_w,
                ipcnn_weighting_w: b.weighting_w,
                ipcnn_capacitive_pj_per_mac: efficiency(
                    &b,
                    b.mac_per_s,
                    WeightingMode::Capacitive,
                )?,
                ipcnn_thermal_pj_per_mac: efficiency(&b, b.mac_per_s, WeightingMode::Thermal)?,
                mac_per_s: b.mac_per_s,
            });
        }
    }
    Ok((budget_rows, eff_rows, headline.expect("IPCNN is in ALL")))
}

pub fn energy_cmd(ctx: &Context) -> Result<(), CliError> {
    let (budget, eff, headline) = energy_tables(&ctx.cfg.hardware)?;
    let files = vec![
        ctx.out.csv("energy_budget.csv", &budget)?,
        ctx.out.csv("efficiency.csv", &eff)?,
    ];
    println!(
        "IPCNN weighting {:.1} W; capacitive {:.3} pJ/MAC; thermal {:.3} pJ/MAC",
        headline.ipcnn_weighting_w,
        headline.ipcnn_capacitive_pj_per_mac,
        headline.ipcnn_thermal_pj_per_mac
    );
    ctx.out
        .summary("energy.json", "energy", None, files, &headline)
}

#[derive(Serialize)]
struct DesignHeadline {
    aggregate_neop_w: f64,
    scale_at_7_4_db: u64,
    scale_at_6_4_db: u64,
    requested_scale: u64,
    nominal_mac_per_s: f64,
    energy: EnergyHeadline,
}

pub fn design_space_cmd(ctx: &Context) -> Result<(), CliError> {
    let hw = &ctx.cfg.hardware;
    let ds = &ctx.cfg.design_space;
    let requested = (hw.c_out * hw.taps()) as u64;
    let mut neops = ds.neop_grid_w.clone();
    neops.sort_by(|a, b| a.total_cmp(b));
    let mut losses = ds.loss_grid_db.clone();
    losses.sort_by(|a, b| a.total_cmp(b));
    let mut scale_rows = Vec::new();
    for &neop in &neops {
        for &loss in &losses {
            let r = max_scale(hw.power_cap_w, loss, neop, hw.snr_target, requested)?;
            scale_rows.push(ScaleRow {
                neop_w: neop,
                loss_db: loss,
                scale: r.scale,
                requested,
                feasible: r.feasible,
                limiting: r.limiting,
            });
        }
    }
    let mut rates = ds.mod_rates_hz.clone();
    rates.sort_by(|a, b| a.total_cmp(b));
    let mut delay_levels = ds.delay_loss_levels_db_per_m.clone();
    delay_levels.sort_by(|a, b| a.total_cmp(b));
    let mut speed_rows = Vec::new();
    for &level in &delay_levels {
        let cfg = HardwareConfig {
            delay_line_loss_db_per_m: level,
            ..hw.clone()
        };
        for p in speed_curve(&cfg, &rates)? {
            speed_rows.push(SpeedRow {
                delay_loss_db_per_m: level,
                mod_rate_hz: p.mod_rate_hz,
                delay_line_length_m: p.delay_line_length_m,
                delay_loss_db: p.delay_loss_db,
                total_loss_db: p.total_loss_db,
                scale: p.scale,
                effective_c_out: p.effective_c_out,
                mac_per_s: p.mac_per_s,
                lossless_mac_per_s: p.lossless_mac_per_s,
                feasible: p.feasible,
            });
        }
    }
    let (budget, eff, energy) = energy_tables(hw)?;
    let headline = DesignHeadline {
        aggregate_neop_w: NoiseBudget::default().aggregate_neop()?,
        scale_at_7_4_db: max_scale(hw.power_cap_w, 7.4, hw.neop_w, hw.snr_target, requested)?.scale,
        scale_at_6_4_db: max_scale(hw.power_cap_w, 6.4, hw.neop_w, hw.snr_target, requested)?.scale,
        requested_scale: requested,
        nominal_mac_per_s: hw.nominal_mac_rate(),
        energy,
    };
    let files = vec![
        ctx.out.csv("scale_grid.csv", &scale_rows)?,
        ctx.out.csv("speed_curves.csv", &speed_rows)?,
        ctx.out.csv("energy_budget.csv", &budget)?,
        ctx.out.csv("efficiency.csv", &eff)?,
    ];
    println!(
        "scale at 7.4 dB: {}; speed {:.2} TMAC/s; capacitive IPCNN {:.3} pJ/MAC",
        headline.scale_at_7_4_db,
        headline.nominal_mac_per_s / 1e12,
        headline.energy.ipcnn_capacitive_pj_per_mac
    );
    ctx.out
        .summary("design_space.json", "design-space", None, files, &headline)
}
