//! Optional TOML config. Every command-line flag has a twin here; flags
//! win over the file, the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "KMMVAE_CONFIG";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub out: Option<PathBuf>,
    pub generator: Option<String>,
    pub n: Option<usize>,
    pub r: Option<usize>,
    pub i: Option<usize>,
    pub normalize: Option<bool>,
    pub coefficient: Option<f64>,
    pub spread: Option<f64>,
    pub interval: Option<f64>,
    pub carrier: Option<f64>,
    pub max_paths: Option<usize>,
    pub los_prob: Option<f64>,
    pub speed_variance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub kind: Option<String>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub eval_count: Option<usize>,
    pub memory: Option<usize>,
    pub latent: Option<usize>,
    pub target: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub free_bits: Option<f64>,
    pub patience: Option<usize>,
    pub lr_divisor: Option<f64>,
    pub max_lr_drops: Option<usize>,
    pub snr_min: Option<f64>,
    pub snr_max: Option<f64>,
    pub early_stop: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub data: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub estimators: Option<Vec<String>>,
    pub vae: Option<PathBuf>,
    pub tsvae: Option<PathBuf>,
    pub kmmvae: Option<PathBuf>,
    pub snrs: Option<Vec<f64>>,
    pub snapshot: Option<usize>,
    pub snr: Option<f64>,
    pub out: Option<PathBuf>,
}

/// Reads `explicit`, else the file named by `KMMVAE_CONFIG`, else nothing.
pub fn load(explicit: Option<&Path>) -> anyhow::Result<FileConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => return Ok(FileConfig::default()),
        },
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
