//! Run configuration: flat TOML sections per module, strict unknown-key
//! rejection, and command-line overrides that take precedence over the file,
//! which takes precedence over built-in defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{AnomalyLabelConvention, Kdd99Options};
use crate::density::{GridBounds, PartitionEstimator};
use crate::error::{MegError, Result};
use crate::sampler::MalaConfig;
use crate::trainer::{ModelConfig, TrainingConfig};

fn default_name() -> String {
    "run".to_string()
}
fn default_dataset() -> String {
    "25gaussians".to_string()
}
fn default_train_samples() -> usize {
    100_000
}
fn default_stacks() -> usize {
    3
}
fn default_stacked_train() -> usize {
    10_000
}
fn default_stacked_eval() -> usize {
    20_000
}
fn default_digit_shape() -> [usize; 2] {
    [10, 10]
}
fn default_digit_per_class() -> usize {
    100
}
fn default_train_fraction() -> f64 {
    0.5
}

/// Dataset binding for a run. Which fields matter depends on `dataset`:
/// the toy families use `train_samples`/`sigma`, the stacked builds use the
/// `stacked_*` and digit-source fields, `kdd99` and `mnist-heldout` read the
/// external paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// One of: 8gaussians, 25gaussians, swissroll, stackedmnist, kdd99,
    /// mnist-heldout.
    pub dataset: String,
    pub train_samples: usize,
    /// Component noise override for the toy families.
    pub sigma: Option<f64>,
    pub kdd99_path: Option<PathBuf>,
    pub kdd99_split_seed: u64,
    pub kdd99_train_fraction: f64,
    /// Anomaly convention: "normal_is_anomaly" (default) or
    /// "attack_is_anomaly".
    pub kdd99_convention: AnomalyLabelConvention,
    /// IDX image/label files for digit-based datasets.
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub mnist_test_images: Option<PathBuf>,
    pub mnist_test_labels: Option<PathBuf>,
    pub heldout_digit: u8,
    pub stacks: usize,
    pub stacked_train_count: usize,
    pub stacked_eval_count: usize,
    /// "idx" to stack real digits from the IDX paths, "synthetic" for the
    /// procedural glyph source.
    pub digit_source: String,
    pub digit_shape: [usize; 2],
    pub digit_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: default_dataset(),
            train_samples: default_train_samples(),
            sigma: None,
            kdd99_path: None,
            kdd99_split_seed: 0,
            kdd99_train_fraction: default_train_fraction(),
            kdd99_convention: AnomalyLabelConvention::NormalIsAnomaly,
            mnist_images: None,
            mnist_labels: None,
            mnist_test_images: None,
            mnist_test_labels: None,
            heldout_digit: 9,
            stacks: default_stacks(),
            stacked_train_count: default_stacked_train(),
            stacked_eval_count: default_stacked_eval(),
            digit_source: "synthetic".to_string(),
            digit_shape: default_digit_shape(),
            digit_per_class: default_digit_per_class(),
        }
    }
}

impl DataConfig {
    pub fn kdd99_options(&self) -> Kdd99Options {
        Kdd99Options {
            convention: self.kdd99_convention,
            split_seed: self.kdd99_split_seed,
            train_fraction: self.kdd99_train_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    pub bounds: GridBounds,
    pub resolution: [usize; 2],
    pub estimator: PartitionEstimator,
    /// Sample count for the importance-sampling estimator.
    pub importance_samples: usize,
    pub importance_bandwidth: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            bounds: GridBounds::default(),
            resolution: [300, 300],
            estimator: PartitionEstimator::Riemann,
            importance_samples: 20_000,
            importance_bandwidth: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModesConfig {
    /// In-mode radius in units of the component sigma.
    pub cutoff: f64,
    pub eval_samples: usize,
}

impl Default for ModesConfig {
    fn default() -> Self {
        ModesConfig { cutoff: 3.0, eval_samples: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnomalyConfig {
    /// Assumed anomaly fraction for the threshold protocol.
    pub contamination: f64,
    /// Test-set size for synthetic smoke runs.
    pub eval_samples: usize,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig { contamination: 0.2, eval_samples: 10_000 }
    }
}

/// Everything a run needs, one section per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub sampler: MalaConfig,
    pub density: DensityConfig,
    pub modes: ModesConfig,
    pub anomaly: AnomalyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: default_name(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            sampler: MalaConfig::default(),
            density: DensityConfig::default(),
            modes: ModesConfig::default(),
            anomaly: AnomalyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.sampler.validate()?;
        self.density.bounds.validate()?;
        if self.name.is_empty() {
            return Err(MegError::config("run name must be non-empty"));
        }
        Ok(())
    }

    /// Canonical TOML snapshot of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// `key.path=value` override applied onto a parsed TOML tree. Values parse
/// as TOML literals, falling back to strings.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw_value) = spec.split_once('=').ok_or_else(|| {
        MegError::config(format!("override '{spec}' must have the form key.path=value"))
    })?;
    let path = path.trim();
    let raw_value = raw_value.trim();
    if path.is_empty() {
        return Err(MegError::config(format!("override '{spec}' has an empty key path")));
    }
    let value: toml::Value = match raw_value.parse() {
        Ok(v) => v,
        Err(_) => toml::Value::String(raw_value.to_string()),
    };

    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            MegError::config(format!("override '{path}': '{seg}' is not a table"))
        })?;
        if i + 1 == segments.len() {
            table.insert(seg.to_string(), value);
            break;
        }
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

/// Parses a config file body and applies overrides, then deserializes
/// strictly: any unknown key fails hard, naming the key.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| MegError::config(format!("config does not parse as TOML: {e}")))?;
    let mut value = toml::Value::Table(table);
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let cfg: RunConfig = value
        .try_into()
        .map_err(|e| MegError::config(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
