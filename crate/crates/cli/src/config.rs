//! Run configuration files and `--set key=value` overrides.

use std::path::{Path, PathBuf};

use alter_core::alga::KernelOptions;
use alter_core::model::ModelConfig;
use alter_core::train::TrainConfig;
use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory holding `dataset.json`, relative to the working directory.
    pub dataset: PathBuf,
    pub threshold: f64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Seed of the split shuffle; the training seed when absent.
    pub split_seed: Option<u64>,
    pub kernel: KernelOptions,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: PathBuf::from("data/synthetic"),
            threshold: 0.3,
            split: [0.7, 0.1, 0.2],
            split_seed: None,
            kernel: KernelOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seeds of a sweep; empty means just `train.seed`.
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn split_seed(&self) -> u64 {
        self.data.split_seed.unwrap_or(self.train.seed)
    }

    pub fn split_ratios(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.data.split;
        (a, b, c)
    }

    pub fn sweep_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.seeds.clone()
        }
    }
}

/// Reads a JSON config, or the defaults when `path` is `None`, then applies overrides.
pub fn load<T>(path: Option<&Path>, overrides: &[String]) -> Result<T>
where
    T: Default + Serialize + DeserializeOwned,
{
    let base: T = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => T::default(),
    };
    apply_overrides(&base, overrides)
}

/// Applies dotted `key=value` assignments. Every key must already exist in
/// the serialized config; values are parsed as JSON, falling back to a string.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(base: &T, overrides: &[String]) -> Result<T> {
    let mut root = serde_json::to_value(base)?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .with_context(|| format!("override {item:?} is not of the form key=value"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => match map.get_mut(part) {
                    Some(v) => v,
                    None => bail!("unknown config key {key:?}"),
                },
                _ => bail!("unknown config key {key:?}"),
            };
        }
        *slot = value;
    }
    serde_json::from_value(root).context("config overrides do not type-check")
}
