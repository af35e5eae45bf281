//! Passive and detection-side component models.

use serde::{Deserialize, Serialize};

use crate::conv_math::{delay_offsets, ConvLayerSpec};
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Group index assumed for Si₃N₄ delay lines when none is configured.
pub const DEFAULT_GROUP_INDEX: f64 = 2.0;

pub fn default_group_velocity() -> f64 {
    SPEED_OF_LIGHT / DEFAULT_GROUP_INDEX
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * db_to_linear(dbm)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    linear_to_db(watts / 1e-3)
}

/// One drop port of the cascaded delay bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayTap {
    /// Delay in modulation clock cycles.
    pub delay_cycles: usize,
    /// Accumulated waveguide length from the bank input, metres.
    pub length_m: f64,
    /// Accumulated propagation loss from the bank input, dB.
    pub accumulated_loss_db: f64,
    /// Fraction of the arriving power sent to the drop port.
    pub drop_coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayBankDesign {
    pub taps: Vec<DelayTap>,
    pub group_velocity: f64,
    pub loss_per_meter_db: f64,
    /// Power at each drop port relative to the bank input (equal by construction).
    pub tap_fraction: f64,
}

impl DelayBankDesign {
    /// Dropped power at every tap, relative to the input, obtained by
    /// propagating the input through the cascade segment by segment.
    pub fn propagate(&self) -> Vec<f64> {
        let mut power = 1.0;
        let mut prev_loss = 0.0;
        self.taps
            .iter()
            .map(|tap| {
                power *= db_to_linear(-(tap.accumulated_loss_db - prev_loss));
                prev_loss = tap.accumulated_loss_db;
                let dropped = power * tap.drop_coupling;
                power -= dropped;
                dropped
            })
            .collect()
    }

    /// Sum of dropped power relative to the input.
    pub fn total_dropped(&self) -> f64 {
        self.tap_fraction * self.taps.len() as f64
    }
}

/// Designs the tapped delay line so that all `Q` drop ports carry the same power.
///
/// Tap `k` sits at the accumulated length of delay `D_k` cycles. With `A_k`
/// the propagation transmission from the input to tap `k`, the common drop
/// power is `P_in / Σ_k A_k⁻¹` and the last tap drops everything. Lossless
/// banks reduce to `κ_k = 1/(Q − k)`.
pub fn design_delay_bank(
    spec: &ConvLayerSpec,
    mod_rate_hz: f64,
    group_velocity: f64,
    loss_per_meter_db: f64,
) -> Result<DelayBankDesign> {
    spec.validate()?;
    if !(mod_rate_hz > 0.0) {
        return Err(Error::param("mod_rate_hz", "must be positive"));
    }
    if !(group_velocity > 0.0) {
        return Err(Error::param("group_velocity", "must be positive"));
    }
    if !(loss_per_meter_db >= 0.0) || !loss_per_meter_db.is_finite() {
        return Err(Error::param(
            "loss_per_meter_db",
            format!("must be finite and >= 0, got {loss_per_meter_db}"),
        ));
    }
    let offsets = delay_offsets(spec.sigma, spec.image_width)?;
    let lengths: Vec<f64> = offsets
        .iter()
        .map(|&d| d as f64 * group_velocity / mod_rate_hz)
        .collect();
    let losses: Vec<f64> = lengths.iter().map(|l| l * loss_per_meter_db).collect();
    let transmissions: Vec<f64> = losses.iter().map(|&db| db_to_linear(-db)).collect();
    if let Some(k) = transmissions.iter().position(|&t| !(t > 0.0)) {
        return Err(Error::InfeasibleDesign(format!(
            "tap {k} sees {:.1} dB of loss; no light reaches it",
            losses[k]
        )));
    }
    let (couplings, share) = equal_drop_couplings(&transmissions)?;
    let taps = offsets
        .iter()
        .zip(&lengths)
        .zip(&losses)
        .zip(&couplings)
        .map(
            |(((&delay_cycles, &length_m), &accumulated_loss_db), &drop_coupling)| DelayTap {
                delay_cycles,
                length_m,
                accumulated_loss_db,
                drop_coupling,
            },
        )
        .collect();
    Ok(DelayBankDesign {
        taps,
        group_velocity,
        loss_per_meter_db,
        tap_fraction: share,
    })
}

/// Drop couplings giving equal dropped power from a cascade whose tap `k`
/// sees propagation transmission `transmissions[k]` from the input.
///
/// Returns the couplings and the common dropped fraction of input power.
pub fn equal_drop_couplings(transmissions: &[f64]) -> Result<(Vec<f64>, f64)> {
    if transmissions.is_empty() {
        return Err(Error::InfeasibleDesign("bank has no taps".into()));
    }
    if let Some(k) = transmissions.iter().position(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::InfeasibleDesign(format!(
            "tap {k} has transmission {}, outside (0, 1]",
            transmissions[k]
        )));
    }
    let share = 1.0 / transmissions.iter().map(|t| 1.0 / t).sum::<f64>();
    let last = transmissions.len() - 1;
    let mut couplings = Vec::with_capacity(transmissions.len());
    for (k, &t) in transmissions.iter().enumerate() {
        // Power arriving at tap k once every earlier tap has dropped `share`.
        let tail: f64 = transmissions[k..].iter().map(|t| 1.0 / t).sum();
        let arriving = share * t * tail;
        let coupling = if k == last { 1.0 } else { share / arriving };
        if !(coupling > 0.0 && coupling <= 1.0 + 1e-12) {
            return Err(Error::InfeasibleDesign(format!(
                "tap {k} needs drop coupling {coupling}, outside (0, 1]"
            )));
        }
        couplings.push(coupling.min(1.0));
    }
    Ok((couplings, share))
}

/// Photodetector and TIA noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    /// Photodetector noise-equivalent power density, W/√Hz.
    pub pd_noise_w_per_rthz: f64,
    /// A/W.
    pub pd_responsivity: f64,
    /// TIA input-referred noise current density, A/√Hz.
    pub tia_noise_a_per_rthz: f64,
    pub bandwidth_hz: f64,
}

impl Default for NoiseBudget {
    fn default() -> Self {
        Self {
            pd_noise_w_per_rthz: 30e-12,
            pd_responsivity: 0.9,
            tia_noise_a_per_rthz: 50e-12,
            bandwidth_hz: 10e9,
        }
    }
}

impl NoiseBudget {
    /// Photodetector contribution, W.
    pub fn pd_contribution(&self) -> f64 {
        self.pd_noise_w_per_rthz * self.bandwidth_hz.sqrt()
    }

    /// TIA contribution referred to optical power, W.
    pub fn tia_contribution(&self) -> f64 {
        self.tia_noise_a_per_rthz * self.bandwidth_hz.sqrt() / self.pd_responsivity
    }

    /// Root-sum-square of the independent contributions, W.
    pub fn aggregate_neop(&self) -> Result<f64> {
        if !(self.pd_responsivity > 0.0) || !(self.bandwidth_hz > 0.0) {
            return Err(Error::param(
                "noise budget",
                "responsivity and bandwidth must be positive",
            ));
        }
        if self.pd_noise_w_per_rthz < 0.0 || self.tia_noise_a_per_rthz < 0.0 {
            return Err(Error::param("noise budget", "noise densities must be >= 0"));
        }
        Ok(self.pd_contribution().hypot(self.tia_contribution()))
    }
}

/// Kerr nonlinearity of a waveguide section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityModel {
    /// Nonlinear index n₂, m²/W.
    pub n2: f64,
    pub wavelength_m: f64,
    pub mode_area_m2: f64,
    /// Effective nonlinear coefficient, rad/W/m.
    pub gamma: f64,
    /// Power cap of the section, W.
    pub max_power_w: f64,
}

impl NonlinearityModel {
    pub fn new(n2: f64, wavelength_m: f64, mode_area_m2: f64, max_power_w: f64) -> Result<Self> {
        if !(max_power_w > 0.0) {
            return Err(Error::param("max_power_w", "must be positive"));
        }
        Ok(Self {
            n2,
            wavelength_m,
            mode_area_m2,
            gamma: nonlinear_coefficient(n2, wavelength_m, mode_area_m2)?,
            max_power_w,
        })
    }
}

/// `γ = 2 · 2π n₂ / (λ A_eff)`.
///
/// The leading factor 2 reproduces the reference values 2.77 and
/// 1.21 rad/W/m for Si₃N₄ at 1550 nm with mode areas 0.702 and 1.599 µm²;
/// the textbook definition omits it.
pub fn nonlinear_coefficient(n2: f64, wavelength_m: f64, mode_area_m2: f64) -> Result<f64> {
    if !(n2 > 0.0 && wavelength_m > 0.0 && mode_area_m2 > 0.0) {
        return Err(Error::param(
            "nonlinear_coefficient",
            "n2, wavelength and mode area must all be positive",
        ));
    }
    Ok(2.0 * (2.0 * std::f64::consts::PI * n2) / (wavelength_m * mode_area_m2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCapCheck {
    pub pass: bool,
    /// `10·log10(cap / power)`; negative when the cap is exceeded.
    pub margin_db: f64,
}

pub fn check_power_cap(power_w: f64, cap_w: f64) -> Result<PowerCapCheck> {
    if !(cap_w > 0.0) {
        return Err(Error::param("cap_w", "must be positive"));
    }
    Ok(PowerCapCheck {
        pass: power_w <= cap_w,
        margin_db: linear_to_db(cap_w / power_w),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossStage {
    pub name: String,
    pub loss_db: f64,
}

impl LossStage {
    pub fn new(name: impl Into<String>, loss_db: f64) -> Self {
        Self {
            name: name.into(),
            loss_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkLoss {
    pub total_db: f64,
    pub transmission: f64,
}

/// Cascades insertion losses.
pub fn link_loss(stages: &[LossStage]) -> Result<LinkLoss> {
    if let Some(bad) = stages.iter().find(|s| !(s.loss_db >= 0.0)) {
        return Err(Error::param(
            "loss_db",
            format!("stage `{}` has negative loss {}", bad.name, bad.loss_db),
        ));
    }
    let total_db: f64 = stages.iter().map(|s| s.loss_db).sum();
    Ok(LinkLoss {
        total_db,
        transmission: db_to_linear(-total_db),
    })
}
