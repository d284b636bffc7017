//! Experiment configuration, read from TOML.
//!
//! Every section and key is optional; missing ones take the defaults below.
//!
//! ```toml
//! seed = 1
//!
//! [grid]            # M, N, carrier and subcarrier spacing
//! m = 8
//! n = 4
//! carrier_hz = 4.0e9
//! delta_f_hz = 15.0e3
//!
//! [channel]         # path count, index bounds, Gauss-Markov ρ, offset bounds
//! p_count = 4
//! l_max = 5
//! k_max = 2
//! rho = 0.6
//! eps_min = -2
//! eps_max = 2
//! veps_min = -2
//! veps_max = 2
//!
//! [link]
//! streams = 32            # K
//! # power_budget = 32.0   # P₀, defaults to K
//! order = 4               # QAM order of the precoded link
//! # baseline_order = 4    # QAM order of the unprecoded baselines, defaults to `order`
//! nmse = 0.01             # estimation error of the history frames
//! tau = 5                 # history length
//! ser_model = "square_qam"  # or "bit_normalized"
//! train_snr_db = 15.0     # noise level inside the training loss
//!
//! [data]
//! train_examples = 20000
//! track_len = 105         # frames per simulated sequence
//! test_channels = 100     # held-out channels per sweep point
//!
//! [train]                 # Adam and early stopping
//! lr = 1e-3
//! batch_size = 64
//! max_iters = 2000
//! patience = 20
//! eval_every = 20
//! val_fraction = 0.1
//! max_val_examples = 512
//!
//! [sweep]
//! snr_grid_db = [5.0, 10.0, 15.0, 20.0]
//! schemes = ["ddcl", "ddcl_theory", "mmse_baseline", "zf_baseline", "perfect_icsi"]
//! n_frames_per_point = 100000
//! max_frames_per_point = 100000000
//! icsi_iters = 200
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::EvolutionParams;
use crate::constellation::{make_constellation, Constellation, SerModel};
use crate::error::{Error, Result};
use crate::link::noise_variance_from_snr_db;
use crate::net::TrainHyper;
use crate::otfs::GridConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub streams: usize,
    pub power_budget: Option<f64>,
    pub order: usize,
    pub baseline_order: Option<usize>,
    pub nmse: f64,
    pub tau: usize,
    pub ser_model: SerModel,
    pub train_snr_db: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            streams: 32,
            power_budget: None,
            order: 4,
            baseline_order: None,
            nmse: 0.01,
            tau: 5,
            ser_model: SerModel::default(),
            train_snr_db: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_examples: usize,
    pub track_len: usize,
    pub test_channels: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_examples: 20_000,
            track_len: 105,
            test_channels: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Ddcl,
    DdclTheory,
    MmseBaseline,
    ZfBaseline,
    PerfectIcsi,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Ddcl,
        Scheme::DdclTheory,
        Scheme::MmseBaseline,
        Scheme::ZfBaseline,
        Scheme::PerfectIcsi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ddcl => "ddcl",
            Scheme::DdclTheory => "ddcl_theory",
            Scheme::MmseBaseline => "mmse_baseline",
            Scheme::ZfBaseline => "zf_baseline",
            Scheme::PerfectIcsi => "perfect_icsi",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Scheme::Ddcl | Scheme::DdclTheory)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_grid_db: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// Frames per point before adaptive extension, split across channels.
    pub n_frames_per_point: u64,
    pub max_frames_per_point: u64,
    /// Optimizer steps per channel for the perfect-CSI bound.
    pub icsi_iters: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_grid_db: vec![5.0, 10.0, 15.0, 20.0],
            schemes: Scheme::ALL.to_vec(),
            n_frames_per_point: 100_000,
            max_frames_per_point: 100_000_000,
            icsi_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub channel: EvolutionParams,
    pub link: LinkConfig,
    pub data: DataConfig,
    pub train: TrainHyper,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            grid: GridConfig::default(),
            channel: EvolutionParams::default(),
            link: LinkConfig::default(),
            data: DataConfig::default(),
            train: TrainHyper::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| config_err(e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    /// Checks every bound the downstream modules rely on.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate().map_err(config_err)?;
        self.channel
            .validate_for_grid(&self.grid)
            .map_err(config_err)?;
        let mn = self.grid.mn();
        let l = &self.link;
        if l.streams == 0 || l.streams > mn {
            return Err(config_err(format!(
                "link.streams must lie in 1..={mn}, got {}",
                l.streams
            )));
        }
        if let Some(p0) = l.power_budget {
            if !(p0 > 0.0) || !p0.is_finite() {
                return Err(config_err("link.power_budget must be positive"));
            }
        }
        make_constellation::<f64>(l.order).map_err(config_err)?;
        make_constellation::<f64>(self.baseline_order()).map_err(config_err)?;
        if !(l.nmse >= 0.0) || !l.nmse.is_finite() {
            return Err(config_err("link.nmse must be finite and >= 0"));
        }
        if l.tau == 0 {
            return Err(config_err("link.tau must be >= 1"));
        }
        if !l.train_snr_db.is_finite() {
            return Err(config_err("link.train_snr_db must be finite"));
        }
        let d = &self.data;
        if d.track_len <= l.tau {
            return Err(config_err(format!(
                "data.track_len ({}) must exceed link.tau ({})",
                d.track_len, l.tau
            )));
        }
        if d.train_examples == 0 || d.test_channels == 0 {
            return Err(config_err(
                "data.train_examples and data.test_channels must be >= 1",
            ));
        }
        self.train.validate().map_err(config_err)?;
        let s = &self.sweep;
        if s.snr_grid_db.is_empty() || s.snr_grid_db.iter().any(|v| !v.is_finite()) {
            return Err(config_err(
                "sweep.snr_grid_db must be a nonempty list of finite values",
            ));
        }
        if s.schemes.is_empty() {
            return Err(config_err("sweep.schemes must not be empty"));
        }
        if s.n_frames_per_point == 0 || s.max_frames_per_point < s.n_frames_per_point {
            return Err(config_err(
                "sweep frame counts must satisfy 1 <= n_frames_per_point <= max_frames_per_point",
            ));
        }
        if s.icsi_iters == 0 {
            return Err(config_err("sweep.icsi_iters must be >= 1"));
        }
        Ok(())
    }

    /// `P₀`, defaulting to `K` so every stream has unit energy.
    pub fn power_budget(&self) -> f64 {
        self.link.power_budget.unwrap_or(self.link.streams as f64)
    }

    pub fn baseline_order(&self) -> usize {
        self.link.baseline_order.unwrap_or(self.link.order)
    }

    pub fn constellation(&self) -> Constellation<f64> {
        make_constellation(self.link.order)
            .expect("validated")
            .with_ser_model(self.link.ser_model)
    }

    pub fn baseline_constellation(&self) -> Constellation<f64> {
        make_constellation(self.baseline_order())
            .expect("validated")
            .with_ser_model(self.link.ser_model)
    }

    pub fn train_sigma2(&self) -> f64 {
        noise_variance_from_snr_db(self.link.train_snr_db)
    }
}
