//! Experiment configuration file.
//!
//! TOML, every section optional, unknown keys rejected. Physical quantities
//! carry their unit in the key name (`_hz`, `_w`, `_db`, `_dbc`, `_db_per_m`,
//! `_m_per_s`, `_j_per_sample`).

use std::path::{Path, PathBuf};

use ipcnn::design_space::HardwareConfig;
use ipcnn::equivalence::EquivalenceConfig;
use ipcnn::nn::{FaultConfig, Hyperparams, NetworkShape};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub hardware: HardwareConfig,
    pub dataset: DatasetConfig,
    pub network: NetworkShape,
    pub training: Hyperparams,
    pub faults: FaultConfig,
    pub inference: InferenceConfig,
    pub sweep_noise: SweepNoiseConfig,
    pub sweep_imbalance: SweepImbalanceConfig,
    pub design_space: DesignSpaceConfig,
    pub equivalence: EquivalenceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            hardware: HardwareConfig::default(),
            dataset: DatasetConfig::default(),
            network: NetworkShape::default(),
            training: Hyperparams::default(),
            faults: FaultConfig::default(),
            inference: InferenceConfig::default(),
            sweep_noise: SweepNoiseConfig::default(),
            sweep_imbalance: SweepImbalanceConfig::default(),
            design_space: DesignSpaceConfig::default(),
            equivalence: EquivalenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Directory with the four IDX files. Falls back to `$IPCNN_MNIST_DIR`,
    /// then `data/mnist`.
    pub mnist_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Defaults to `<out-dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// First N test images; all when absent.
    pub subset_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepNoiseConfig {
    pub levels_dbc: Vec<f64>,
    /// Adds the noiseless reference level ahead of `levels_dbc`.
    pub include_noiseless: bool,
    pub seeds: Vec<u64>,
    pub subset_size: usize,
}

impl Default for SweepNoiseConfig {
    fn default() -> Self {
        Self {
            levels_dbc: vec![-25.0, -20.0, -15.0, -10.0, -5.0, -3.0, 0.0],
            include_noiseless: true,
            seeds: (0..5).collect(),
            subset_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepImbalanceConfig {
    pub levels_db: Vec<f64>,
    pub trials: usize,
    pub calibration: bool,
    /// Detection noise during the sweep; absent means noiseless.
    pub neop_dbc: Option<f64>,
    pub subset_size: usize,
}

impl Default for SweepImbalanceConfig {
    fn default() -> Self {
        Self {
            levels_db: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            trials: 100,
            calibration: false,
            neop_dbc: None,
            subset_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSpaceConfig {
    /// Loss axis of the scale grid, dB.
    pub loss_grid_db: Vec<f64>,
    /// NEOP axis of the scale grid, W.
    pub neop_grid_w: Vec<f64>,
    pub mod_rates_hz: Vec<f64>,
    pub delay_loss_levels_db_per_m: Vec<f64>,
}

impl Default for DesignSpaceConfig {
    fn default() -> Self {
        Self {
            loss_grid_db: (0..=24).map(|k| 0.5 * k as f64).collect(),
            neop_grid_w: vec![1e-6, 2e-6, 4e-6, 6.3e-6, 1e-5, 2e-5, 4e-5],
            mod_rates_hz: (1..=20).map(|k| k as f64 * 1e9).collect(),
            delay_loss_levels_db_per_m: vec![0.1, 1.0, 10.0],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: ipcnn::Error| CliError::Config(e.to_string());
        self.hardware.validate().map_err(cfg)?;
        self.network.validate().map_err(cfg)?;
        self.training.validate().map_err(cfg)?;
        self.equivalence.validate().map_err(cfg)?;
        if self.faults.calibration_repeats == 0 {
            return Err(CliError::Config(
                "faults.calibration_repeats must be >= 1".into(),
            ));
        }
        if self.sweep_noise.seeds.is_empty() {
            return Err(CliError::Config(
                "sweep_noise.seeds must not be empty".into(),
            ));
        }
        if self.sweep_noise.levels_dbc.windows(2).any(|w| w[0] > w[1]) {
            return Err(CliError::Config(
                "sweep_noise.levels_dbc must be sorted ascending".into(),
            ));
        }
        if self.sweep_imbalance.trials == 0 {
            return Err(CliError::Config(
                "sweep_imbalance.trials must be >= 1".into(),
            ));
        }
        if self.sweep_imbalance.levels_db.iter().any(|l| !(*l >= 0.0)) {
            return Err(CliError::Config(
                "sweep_imbalance.levels_db must be >= 0".into(),
            ));
        }
        let ds = &self.design_space;
        if ds.neop_grid_w.iter().any(|n| !(*n > 0.0)) || ds.mod_rates_hz.iter().any(|f| !(*f > 0.0))
        {
            return Err(CliError::Config(
                "design_space NEOP and rate grids must be positive".into(),
            ));
        }
        if ds
            .loss_grid_db
            .iter()
            .chain(&ds.delay_loss_levels_db_per_m)
            .any(|l| !(*l >= 0.0))
        {
            return Err(CliError::Config(
                "design_space loss grids must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, so formatting and key order in
    /// the file do not matter.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(canonical))
    }
}
