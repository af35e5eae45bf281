//! Closed-form scale, speed and power models.
//!
//! Every detector branch must receive `snr_target · NEOP` of signal power.
//! The achievable number of branches follows from the waveguide power cap and
//! the loss between the WDM output and the detectors; the laser budget is the
//! same requirement propagated back to the wall plug.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{db_to_linear, default_group_velocity};

/// Physical parameters of the accelerator and its comparison baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardwareConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_width: usize,
    /// Image width used to size the delay lines.
    pub image_width: usize,
    pub mod_rate_hz: f64,
    pub neop_w: f64,
    /// Linear SNR required at every detector.
    pub snr_target: f64,
    pub power_cap_w: f64,
    /// Splitters and rings between the delay bank and the detectors.
    pub splitter_mrr_loss_db: f64,
    /// Whole WDM-output-to-detector loss used by the energy budget.
    pub wdm_to_pd_loss_db: f64,
    pub wdm_loss_db: f64,
    pub modulator_loss_db: f64,
    pub input_port_loss_db: f64,
    pub delay_line_loss_db_per_m: f64,
    pub group_velocity_m_per_s: f64,
    /// Loss advantage of architectures without a delay bank.
    pub comparative_loss_reduction_db: f64,
    pub mrr_power_w: f64,
    pub tia_power_w: f64,
    pub modulator_power_w: f64,
    pub adc_energy_j_per_sample: f64,
    pub wall_plug_efficiency: f64,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        Self {
            c_in: 64,
            c_out: 32,
            kernel_width: 3,
            image_width: 28,
            mod_rate_hz: 5e9,
            neop_w: 6.3e-6,
            snr_target: 10.0,
            power_cap_w: 0.1,
            splitter_mrr_loss_db: 3.4,
            wdm_to_pd_loss_db: 6.4,
            wdm_loss_db: 1.0,
            modulator_loss_db: 4.0,
            input_port_loss_db: 2.0,
            delay_line_loss_db_per_m: 1.0,
            group_velocity_m_per_s: default_group_velocity(),
            comparative_loss_reduction_db: 4.0,
            mrr_power_w: 19.5e-3,
            tia_power_w: 2.2e-3,
            modulator_power_w: 90e-3,
            adc_energy_j_per_sample: 1e-12,
            wall_plug_efficiency: 0.05,
        }
    }
}

impl HardwareConfig {
    pub fn taps(&self) -> usize {
        self.kernel_width * self.kernel_width
    }

    /// Nominal multiply-accumulate rate `c_in · c_out · Q · f_m`.
    pub fn nominal_mac_rate(&self) -> f64 {
        (self.c_in * self.c_out * self.taps()) as f64 * self.mod_rate_hz
    }

    /// Longest tap delay `(σ − 1)(L + 1)` in cycles.
    pub fn max_delay_cycles(&self) -> usize {
        self.kernel_width.saturating_sub(1) * (self.image_width + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.kernel_width == 0 {
            return Err(Error::param(
                "hardware",
                "channel counts and kernel width must be >= 1",
            ));
        }
        if self.image_width < self.kernel_width {
            return Err(Error::param("image_width", "must be >= kernel_width"));
        }
        let positive = [
            ("mod_rate_hz", self.mod_rate_hz),
            ("neop_w", self.neop_w),
            ("power_cap_w", self.power_cap_w),
            ("group_velocity_m_per_s", self.group_velocity_m_per_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("splitter_mrr_loss_db", self.splitter_mrr_loss_db),
            ("wdm_to_pd_loss_db", self.wdm_to_pd_loss_db),
            ("wdm_loss_db", self.wdm_loss_db),
            ("modulator_loss_db", self.modulator_loss_db),
            ("input_port_loss_db", self.input_port_loss_db),
            ("delay_line_loss_db_per_m", self.delay_line_loss_db_per_m),
            (
                "comparative_loss_reduction_db",
                self.comparative_loss_reduction_db,
            ),
            ("mrr_power_w", self.mrr_power_w),
            ("tia_power_w", self.tia_power_w),
            ("modulator_power_w", self.modulator_power_w),
            ("adc_energy_j_per_sample", self.adc_energy_j_per_sample),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be >= 0, got {v}")));
            }
        }
        if !(self.snr_target >= 1.0) {
            return Err(Error::param("snr_target", "must be >= 1"));
        }
        if !(self.wall_plug_efficiency > 0.0 && self.wall_plug_efficiency <= 1.0) {
            return Err(Error::param("wall_plug_efficiency", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitingFactor {
    /// Feasible; the waveguide power cap sets the scale.
    PowerCap,
    /// Would be feasible without the insertion loss.
    Loss,
    /// Infeasible even without loss.
    Neop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleResult {
    pub scale: u64,
    pub requested: u64,
    pub feasible: bool,
    pub limiting: LimitingFactor,
}

/// `⌊cap · 10^(−loss/10) / (snr · NEOP)⌋` detector branches.
pub fn max_scale(
    power_cap_w: f64,
    insertion_loss_db: f64,
    neop_w: f64,
    snr_target: f64,
    requested: u64,
) -> Result<ScaleResult> {
    if !(power_cap_w > 0.0 && neop_w > 0.0 && snr_target > 0.0) {
        return Err(Error::param(
            "max_scale",
            "cap, NEOP and SNR must be positive",
        ));
    }
    if !(insertion_loss_db >= 0.0) {
        return Err(Error::param("insertion_loss_db", "must be >= 0"));
    }
    let per_branch = snr_target * neop_w;
    let scale = branch_count(power_cap_w * db_to_linear(-insertion_loss_db) / per_branch);
    let lossless = branch_count(power_cap_w / per_branch);
    let feasible = scale >= requested;
    let limiting = if feasible {
        LimitingFactor::PowerCap
    } else if lossless >= requested {
        LimitingFactor::Loss
    } else {
        LimitingFactor::Neop
    };
    Ok(ScaleResult {
        scale,
        requested,
        feasible,
        limiting,
    })
}

/// Floor with a relative guard so exact integer ratios are not lost to rounding.
fn branch_count(ratio: f64) -> u64 {
    (ratio * (1.0 + 1e-12)).floor().max(0.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedPoint {
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

fn effective_c_out(cfg: &HardwareConfig, scale: u64) -> usize {
    cfg.c_out.min((scale / cfg.taps() as u64) as usize)
}

/// Computing speed with the longest delay line's loss folded into the scale.
/// Configurations that cannot feed a single output channel are reported
/// with `feasible = false` and zero speed.
pub fn speed_point(cfg: &HardwareConfig) -> Result<SpeedPoint> {
    cfg.validate()?;
    let length = cfg.max_delay_cycles() as f64 * cfg.group_velocity_m_per_s / cfg.mod_rate_hz;
    let delay_loss_db = cfg.delay_line_loss_db_per_m * length;
    let total_loss_db = cfg.splitter_mrr_loss_db + delay_loss_db;
    let requested = (cfg.c_out * cfg.taps()) as u64;
    let scale = max_scale(
        cfg.power_cap_w,
        total_loss_db,
        cfg.neop_w,
        cfg.snr_target,
        requested,
    )?
    .scale;
    let lossless = max_scale(
        cfg.power_cap_w,
        cfg.splitter_mrr_loss_db,
        cfg.neop_w,
        cfg.snr_target,
        requested,
    )?
    .scale;
    let rate = |c_out: usize| (cfg.c_in * c_out * cfg.taps()) as f64 * cfg.mod_rate_hz;
    let c_eff = effective_c_out(cfg, scale);
    Ok(SpeedPoint {
        mod_rate_hz: cfg.mod_rate_hz,
        delay_line_length_m: length,
        delay_loss_db,
        total_loss_db,
        scale,
        effective_c_out: c_eff,
        mac_per_s: rate(c_eff),
        lossless_mac_per_s: rate(effective_c_out(cfg, lossless)),
        feasible: c_eff >= 1,
    })
}

/// Strict variant of [`speed_point`]: infeasible configurations are errors.
pub fn speed(cfg: &HardwareConfig) -> Result<f64> {
    let point = speed_point(cfg)?;
    if !point.feasible {
        return Err(Error::InfeasibleScale {
            scale: point.scale,
            taps: cfg.taps(),
        });
    }
    Ok(point.mac_per_s)
}

/// Speed at each modulation rate of `rates_hz`.
pub fn speed_curve(cfg: &HardwareConfig, rates_hz: &[f64]) -> Result<Vec<SpeedPoint>> {
    rates_hz
        .iter()
        .map(|&f| {
            speed_point(&HardwareConfig {
                mod_rate_hz: f,
                ..cfg.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Ipcnn,
    Deap,
    Bw,
    Coherent,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Ipcnn,
        Architecture::Deap,
        Architecture::Bw,
        Architecture::Coherent,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Ipcnn => "IPCNN",
            Architecture::Deap => "DEAP",
            Architecture::Bw => "BW",
            Architecture::Coherent => "Coherent",
        }
    }

    /// Device inventory at the configured layer size.
    ///
    /// * IPCNN: `c_in` modulators (one per wavelength, shared by all taps via
    ///   the delay bank), `c_in·c_out·Q` weighting rings, `c_out·Q` detector
    ///   branches each with a TIA, `c_out` ADCs.
    /// * DEAP: `c_in·Q` ring modulators, `c_in·Q` weighting rings, `Q`
    ///   detector branches, one ADC.
    /// * BW: `c_in` modulators, `c_in·c_out` weighting rings, `c_out` branches.
    /// * Coherent: `c_in·Q` modulators, `c_in·c_out·Q` phase shifters,
    ///   `c_out·Q` optical branches read by `c_out` TIAs.
    pub fn devices(&self, cfg: &HardwareConfig) -> DeviceCounts {
        let (ci, co, q) = (cfg.c_in, cfg.c_out, cfg.taps());
        let reduction = cfg.comparative_loss_reduction_db;
        match self {
            Architecture::Ipcnn => DeviceCounts {
                modulators: ci,
                modulator_power_w: cfg.modulator_power_w,
                weighting_elements: ci * co * q,
                detector_branches: co * q,
                tias: co * q,
                adcs: co,
                loss_reduction_db: 0.0,
            },
            Architecture::Deap => DeviceCounts {
                modulators: ci * q,
                modulator_power_w: cfg.mrr_power_w,
                weighting_elements: ci * q,
                detector_branches: q,
                tias: q,
                adcs: 1,
                loss_reduction_db: reduction,
            },
            Architecture::Bw => DeviceCounts {
                modulators: ci,
                modulator_power_w: cfg.modulator_power_w,
                weighting_elements: ci * co,
                detector_branches: co,
                tias: co,
                adcs: co,
                loss_reduction_db: reduction,
            },
            Architecture::Coherent => DeviceCounts {
                modulators: ci * q,
                modulator_power_w: cfg.modulator_power_w,
                weighting_elements: ci * co * q,
                detector_branches: co * q,
                tias: co,
                adcs: co,
                loss_reduction_db: reduction,
            },
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ipcnn" => Ok(Architecture::Ipcnn),
            "deap" => Ok(Architecture::Deap),
            "bw" => Ok(Architecture::Bw),
            "coherent" => Ok(Architecture::Coherent),
            _ => Err(Error::UnknownArchitecture(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceCounts {
    pub modulators: usize,
    pub modulator_power_w: f64,
    pub weighting_elements: usize,
    pub detector_branches: usize,
    pub tias: usize,
    pub adcs: usize,
    pub loss_reduction_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsystemRatios {
    pub lasers: f64,
    pub eo: f64,
    /// Zero in the without-weighting breakdown.
    pub weighting: f64,
    pub tia: f64,
    pub adc: f64,
}

impl SubsystemRatios {
    pub fn sum(&self) -> f64 {
        self.lasers + self.eo + self.weighting + self.tia + self.adc
    }
}

/// Electrical power per subsystem, watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerBudget {
    pub architecture: Architecture,
    pub lasers_w: f64,
    pub eo_w: f64,
    pub weighting_w: f64,
    pub tia_w: f64,
    pub adc_w: f64,
    pub total_w: f64,
    pub ratios: SubsystemRatios,
    pub ratios_without_weighting: SubsystemRatios,
    /// Optical power the lasers must emit, W.
    pub laser_optical_w: f64,
    pub mac_per_s: f64,
    /// Thermal-weighting efficiency, pJ/MAC.
    pub pj_per_mac: f64,
}

impl PowerBudget {
    fn from_parts(
        architecture: Architecture,
        [lasers_w, eo_w, weighting_w, tia_w, adc_w]: [f64; 5],
        laser_optical_w: f64,
        mac_per_s: f64,
    ) -> Self {
        let total_w = lasers_w + eo_w + weighting_w + tia_w + adc_w;
        let frac = |x: f64, of: f64| if of > 0.0 { x / of } else { 0.0 };
        let without = total_w - weighting_w;
        Self {
            architecture,
            lasers_w,
            eo_w,
            weighting_w,
            tia_w,
            adc_w,
            total_w,
            ratios: SubsystemRatios {
                lasers: frac(lasers_w, total_w),
                eo: frac(eo_w, total_w),
                weighting: frac(weighting_w, total_w),
                tia: frac(tia_w, total_w),
                adc: frac(adc_w, total_w),
            },
            ratios_without_weighting: SubsystemRatios {
                lasers: frac(lasers_w, without),
                eo: frac(eo_w, without),
                weighting: 0.0,
                tia: frac(tia_w, without),
                adc: frac(adc_w, without),
            },
            laser_optical_w,
            mac_per_s,
            pj_per_mac: frac(total_w, mac_per_s) * 1e12,
        }
    }

    /// `(name, watts)` rows in table order.
    pub fn rows(&self) -> [(&'static str, f64); 5] {
        [
            ("lasers", self.lasers_w),
            ("eo", self.eo_w),
            ("weighting", self.weighting_w),
            ("tia", self.tia_w),
            ("adc", self.adc_w),
        ]
    }
}

/// Power budget of `arch`, evaluated tail to head from the detector SNR requirement.
pub fn energy_budget(arch: Architecture, cfg: &HardwareConfig) -> Result<PowerBudget> {
    cfg.validate()?;
    let d = arch.devices(cfg);
    let detected_w = d.detector_branches as f64 * cfg.snr_target * cfg.neop_w;
    let chain_db =
        cfg.wdm_to_pd_loss_db + cfg.wdm_loss_db + cfg.modulator_loss_db + cfg.input_port_loss_db
            - d.loss_reduction_db;
    let laser_optical_w = detected_w * db_to_linear(chain_db);
    let parts = [
        laser_optical_w / cfg.wall_plug_efficiency,
        d.modulators as f64 * d.modulator_power_w,
        d.weighting_elements as f64 * cfg.mrr_power_w,
        d.tias as f64 * cfg.tia_power_w,
        d.adcs as f64 * cfg.mod_rate_hz * cfg.adc_energy_j_per_sample,
    ];
    // Every weighting element performs one MAC per modulation cycle.
    let mac_per_s = d.weighting_elements as f64 * cfg.mod_rate_hz;
    Ok(PowerBudget::from_parts(
        arch,
        parts,
        laser_optical_w,
        mac_per_s,
    ))
}

pub fn energy_budget_ipcnn(cfg: &HardwareConfig) -> Result<PowerBudget> {
    energy_budget(Architecture::Ipcnn, cfg)
}

/// Budget for a comparison architecture given by name.
pub fn energy_budget_comparative(architecture: &str, cfg: &HardwareConfig) -> Result<PowerBudget> {
    let arch: Architecture = architecture.parse()?;
    if arch == Architecture::Ipcnn {
        return Err(Error::UnknownArchitecture(format!(
            "{architecture} (not a comparison architecture)"
        )));
    }
    energy_budget(arch, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Heater-tuned weights that dissipate continuously.
    Thermal,
    /// Static weights holding state at (near) zero power.
    Capacitive,
}

impl WeightingMode {
    pub const ALL: [WeightingMode; 2] = [WeightingMode::Thermal, WeightingMode::Capacitive];

    pub fn name(&self) -> &'static str {
        match self {
            WeightingMode::Thermal => "thermal",
            WeightingMode::Capacitive => "capacitive",
        }
    }
}

/// Energy per MAC in pJ.
pub fn efficiency(budget: &PowerBudget, mac_per_s: f64, mode: WeightingMode) -> Result<f64> {
    if !(mac_per_s > 0.0) {
        return Err(Error::param("mac_per_s", "speed must be positive"));
    }
    let power = match mode {
        WeightingMode::Thermal => budget.total_w,
        WeightingMode::Capacitive => budget.total_w - budget.weighting_w,
    };
    Ok(power / mac_per_s * 1e12)
}

/// Electronic state of the art, pJ/MAC.
pub const ELECTRONIC_REFERENCE_PJ_PER_MAC: f64 = 1.0;
