//! Simulation configuration: a nested key-value (TOML) file with strict
//! unknown-key rejection, cross-field validation, and a stable content hash
//! that ties every output file to the inputs that produced it.

use crate::mobility::LevyParams;
use crate::radio::RadioParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    /// Rings of the hexagonal grid (0 = a single site).
    pub rings: u32,
    pub inter_site_m: f64,
    /// Uplink bandwidth per site, Hz.
    pub bandwidth_hz: f64,
    /// Arena margin beyond the bounding box of the sites, metres.
    pub bounds_margin_m: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            rings: 1,
            inter_site_m: 500.0,
            bandwidth_hz: 1.5e6,
            bounds_margin_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlConfig {
    /// Hidden layer widths; input/output sizes come from the dataset.
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_iterations: usize,
    /// Uplink payload per local model, bits. 0 means 32 bits per parameter;
    /// set explicitly to model heavier architectures.
    pub payload_bits_override: f64,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            hidden_layers: vec![64],
            learning_rate: 0.05,
            batch_size: 32,
            local_iterations: 30,
            payload_bits_override: 2.0e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyModel {
    /// Slice latency = sum of client upload latencies (default).
    Sum,
    /// Slice latency = worst client upload latency.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacOrder {
    /// Serve clients in descending channel gain (default).
    Gain,
    /// Ablation: serve cheapest requirement first.
    Cheapest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Minimum slice fraction for a service with pending uploads at a site.
    pub f_min: f64,
    pub nearrt_period_s: f64,
    pub nonrt_period_s: f64,
    pub mac_dt_s: f64,
    /// Mobility-only phase before round 1, seconds.
    pub warmup_s: f64,
    /// Links below this efficiency enter the load model at the floor.
    pub se_floor: f64,
    /// Per-client local compute for one round is drawn uniformly from this
    /// range, seconds.
    pub compute_time_min_s: f64,
    pub compute_time_max_s: f64,
    /// Downlink broadcast delay at round start, seconds (default 0).
    pub downlink_delay_s: f64,
    pub latency_model: LatencyModel,
    pub mac_order: MacOrder,
    /// Debug: bypass mobility prediction with true positions.
    pub use_true_positions: bool,
    /// When false, the per-round deadline excludes local compute time.
    pub deadline_includes_compute: bool,
    /// Retrain the mobility predictor every this many seconds (0 = train
    /// once after warm-up, then freeze).
    pub eapp_refresh_period_s: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            f_min: 0.05,
            nearrt_period_s: 3.0,
            nonrt_period_s: 10.0,
            mac_dt_s: 0.010,
            warmup_s: 60.0,
            se_floor: 1e-3,
            compute_time_min_s: 2.0,
            compute_time_max_s: 8.0,
            downlink_delay_s: 0.0,
            latency_model: LatencyModel::Sum,
            mac_order: MacOrder::Gain,
            use_true_positions: false,
            deadline_includes_compute: true,
            eapp_refresh_period_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EappSettings {
    /// History points per prediction.
    pub window_k: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Train one predictor per client instead of a shared one.
    pub per_client: bool,
}

impl Default for EappSettings {
    fn default() -> Self {
        EappSettings {
            window_k: 3,
            hidden: vec![32, 32],
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            per_client: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub id: usize,
    /// Dataset label; clients of this type are recruited by this service.
    pub dataset: String,
    pub deadline_s: f64,
    /// Latency weight in the controller objective.
    pub weight: f64,
    pub target_accuracy: f64,
    pub client_count: usize,
    /// Dirichlet concentration of the client data partition.
    pub alpha: f64,
    #[serde(default)]
    pub recruitment_budget: f64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
}

fn default_rounds() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum DatasetConfig {
    /// Gaussian-blob fixture generated in memory.
    Synth {
        classes: usize,
        samples_per_client: usize,
        test_per_class: usize,
        features: usize,
    },
    /// IDX file pairs (MNIST layout). Paths are resolved relative to the
    /// config file location when loaded from disk.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        downsample_side: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogConfig {
    /// Emit the high-volume per-tick MAC grant log.
    pub mac_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    /// Seed for dataset generation, independent of the run seed so all runs
    /// of one config share datasets.
    pub data_seed: u64,
    pub topology: TopologyConfig,
    pub radio: RadioParams,
    pub mobility: LevyParams,
    pub fl: FlConfig,
    pub controller: ControllerConfig,
    pub eapp: EappSettings,
    pub services: Vec<ServiceConfig>,
    pub datasets: BTreeMap<String, DatasetConfig>,
    pub log: LogConfig,
}

impl Default for LogConfig {
    fn default() -> Self {
        LogConfig { mac_csv: false }
    }
}

impl SimConfig {
    /// The shipped scenario: 7 sites on a hexagonal grid with 1.5 MHz each,
    /// two services of 16 clients (deadlines 30 s / 20 s, weights 30 / 100,
    /// Dirichlet alpha 10 / 0.01), 10 rounds of 30 local iterations.
    pub fn case_study() -> Self {
        let mut datasets = BTreeMap::new();
        datasets.insert(
            "blobs-a".to_string(),
            DatasetConfig::Synth {
                classes: 10,
                samples_per_client: 600,
                test_per_class: 200,
                features: 196,
            },
        );
        datasets.insert(
            "blobs-b".to_string(),
            DatasetConfig::Synth {
                classes: 10,
                samples_per_client: 600,
                test_per_class: 200,
                features: 196,
            },
        );
        SimConfig {
            seed: 0,
            data_seed: 42,
            topology: TopologyConfig::default(),
            radio: RadioParams {
                reference_snr: 5e7,
                shadowing_sigma_db: 6.0,
                ..RadioParams::default()
            },
            mobility: LevyParams::default(),
            fl: FlConfig::default(),
            controller: ControllerConfig::default(),
            eapp: EappSettings::default(),
            services: vec![
                ServiceConfig {
                    id: 1,
                    dataset: "blobs-a".into(),
                    deadline_s: 30.0,
                    weight: 30.0,
                    target_accuracy: 0.90,
                    client_count: 16,
                    alpha: 10.0,
                    recruitment_budget: 0.0,
                    rounds: 10,
                },
                ServiceConfig {
                    id: 2,
                    dataset: "blobs-b".into(),
                    deadline_s: 20.0,
                    weight: 100.0,
                    target_accuracy: 0.86,
                    client_count: 16,
                    alpha: 0.01,
                    recruitment_budget: 0.0,
                    rounds: 10,
                },
            ],
            datasets,
            log: LogConfig::default(),
        }
    }

    /// Validate every cross-field constraint. Returns a message naming the
    /// offending key on failure.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Invalid(m));
        let dt = self.controller.mac_dt_s;
        if !(dt > 0.0) {
            return err("controller.mac_dt_s must be > 0".into());
        }
        for (name, period) in [
            ("controller.nearrt_period_s", self.controller.nearrt_period_s),
            ("controller.nonrt_period_s", self.controller.nonrt_period_s),
            ("controller.warmup_s", self.controller.warmup_s),
        ] {
            if period < 0.0 || !is_tick_multiple(period, dt) {
                return err(format!("{name} = {period} is not a multiple of mac_dt_s = {dt}"));
            }
        }
        if self.controller.nearrt_period_s <= 0.0 || self.controller.nonrt_period_s <= 0.0 {
            return err("controller periods must be > 0".into());
        }
        if self.services.is_empty() {
            return err("services list must not be empty".into());
        }
        let f_min = self.controller.f_min;
        if !(0.0..=1.0).contains(&f_min) {
            return err(format!("controller.f_min = {f_min} must be in [0, 1]"));
        }
        if f_min * self.services.len() as f64 > 1.0 + 1e-12 {
            return err(format!(
                "controller.f_min = {f_min} is infeasible for {} services",
                self.services.len()
            ));
        }
        if !(self.controller.compute_time_min_s > 0.0
            && self.controller.compute_time_min_s <= self.controller.compute_time_max_s)
        {
            return err("controller compute time range must satisfy 0 < min <= max".into());
        }
        if self.controller.se_floor <= 0.0 {
            return err("controller.se_floor must be > 0".into());
        }
        if self.controller.downlink_delay_s < 0.0 {
            return err("controller.downlink_delay_s must be >= 0".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.services {
            if !ids.insert(s.id) {
                return err(format!("duplicate service id {}", s.id));
            }
            if s.deadline_s <= 0.0 || !is_tick_multiple(s.deadline_s, dt) {
                return err(format!(
                    "services.deadline_s = {} (service {}) must be a positive multiple of mac_dt_s",
                    s.deadline_s, s.id
                ));
            }
            if s.weight <= 0.0 {
                return err(format!("services.weight must be > 0 (service {})", s.id));
            }
            if s.alpha <= 0.0 {
                return err(format!("services.alpha must be > 0 (service {})", s.id));
            }
            if s.client_count == 0 {
                return err(format!("services.client_count must be >= 1 (service {})", s.id));
            }
            if s.rounds == 0 {
                return err(format!("services.rounds must be >= 1 (service {})", s.id));
            }
            if !(0.0..=1.0).contains(&s.target_accuracy) {
                return err(format!(
                    "services.target_accuracy must be in [0, 1] (service {})",
                    s.id
                ));
            }
            if !self.datasets.contains_key(&s.dataset) {
                return err(format!(
                    "service {} references unknown dataset \"{}\"",
                    s.id, s.dataset
                ));
            }
        }
        for (name, ds) in &self.datasets {
            if let DatasetConfig::Synth {
                classes,
                samples_per_client,
                test_per_class,
                features,
            } = ds
            {
                if *classes == 0 || *samples_per_client == 0 || *test_per_class == 0 || *features == 0
                {
                    return err(format!("datasets.{name}: all synth sizes must be >= 1"));
                }
            }
        }
        if self.topology.inter_site_m <= 0.0 {
            return err("topology.inter_site_m must be > 0".into());
        }
        if self.topology.bandwidth_hz <= 0.0 {
            return err("topology.bandwidth_hz must be > 0".into());
        }
        if self.radio.reference_distance <= 0.0
            || self.radio.path_loss_exponent < 2.0
            || self.radio.reference_snr <= 0.0
            || self.radio.hysteresis_margin < 0.0
        {
            return err("radio parameters out of range (d0 > 0, eta >= 2, snr > 0, margin >= 0)".into());
        }
        if self.radio.shadowing_sigma_db < 0.0 || self.radio.shadowing_corr_m <= 0.0 {
            return err("radio shadowing parameters out of range (sigma >= 0, corr > 0)".into());
        }
        self.mobility
            .validate()
            .map_err(ConfigError::Invalid)?;
        if self.fl.hidden_layers.iter().any(|&h| h == 0) {
            return err("fl.hidden_layers entries must be > 0".into());
        }
        if self.fl.batch_size == 0 {
            return err("fl.batch_size must be >= 1".into());
        }
        if self.fl.payload_bits_override < 0.0 {
            return err("fl.payload_bits_override must be >= 0".into());
        }
        if self.eapp.window_k == 0 {
            return err("eapp.window_k must be >= 1".into());
        }
        if self.eapp.hidden.len() != 2 || self.eapp.hidden.iter().any(|&h| h == 0) {
            return err("eapp.hidden must list exactly two positive widths".into());
        }
        if self.controller.eapp_refresh_period_s < 0.0
            || !is_tick_multiple(self.controller.eapp_refresh_period_s, dt)
        {
            return err("controller.eapp_refresh_period_s must be a non-negative multiple of mac_dt_s".into());
        }
        Ok(())
    }

    /// Stable hash of the canonical serialized form, hex-truncated.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn is_tick_multiple(period: f64, dt: f64) -> bool {
    let ticks = period / dt;
    (ticks - ticks.round()).abs() < 1e-6
}

pub(crate) fn ticks_of(period: f64, dt: f64) -> u64 {
    (period / dt).round() as u64
}

/// Load and validate a config file; IDX dataset paths become relative to the
/// config file's directory.
pub fn parse_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: display.clone(),
        source,
    })?;
    let mut config: SimConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: display,
        message: e.to_string(),
    })?;
    if let Some(dir) = path.parent() {
        for ds in config.datasets.values_mut() {
            if let DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } = ds
            {
                for p in [train_images, train_labels, test_images, test_labels] {
                    if p.is_relative() {
                        *p = dir.join(&p);
                    }
                }
            }
        }
    }
    config.validate()?;
    Ok(config)
}

/// Human-readable reference of every config key with its default, emitted by
/// the CLI's `print-config-reference`.
pub fn config_reference() -> String {
    let defaults = SimConfig::case_study();
    let mut out = String::new();
    out.push_str(
        "# Configuration reference. Every key below is shown with its shipped\n\
         # default; unknown keys are rejected at load time.\n\
         #\n\
         # seed                run seed (mobility, partitions, model init, batches)\n\
         # data_seed           dataset-generation seed, shared across runs of a config\n\
         # [topology]          hex grid: rings, inter-site distance, per-site Hz, arena margin\n\
         # [radio]             log-distance channel: d0, exponent, reference SNR, handover margin\n\
         # [mobility]          truncated-Pareto flights: exponent, min/max flight, speed\n\
         # [fl]                classifier and SGD settings; payload_bits_override sets the\n\
         #                     uplink size in bits (0 = 32 bits x parameter count)\n\
         # [controller]        control periods (must be multiples of mac_dt_s), slice floor,\n\
         #                     compute-time range, latency model (sum|max), MAC order\n\
         #                     (gain|cheapest), debug flags\n\
         # [eapp]              mobility-predictor window, widths, training settings\n\
         # [[services]]        one block per FL service: id, dataset label, deadline_s,\n\
         #                     weight, target_accuracy, client_count, alpha, rounds\n\
         # [datasets.<label>]  kind = \"synth\" (classes, samples_per_client, test_per_class,\n\
         #                     features) or kind = \"idx\" (IDX file paths + downsample_side)\n\
         # [log]               mac_csv enables the per-tick grant log\n\n",
    );
    out.push_str(&defaults.to_toml());
    out
}
