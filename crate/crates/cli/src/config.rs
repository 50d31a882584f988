//! Layered configuration: command-line flag, then config file, then default.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Contents of a `--config` TOML file. Sections mirror subcommands.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub discover: toml::Table,
    #[serde(default)]
    pub project: toml::Table,
    #[serde(default)]
    pub train: toml::Table,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Overlays `file` and then `flags` onto `base`. Keys unknown to `base` are
/// rejected so that typos in the config file do not pass silently.
pub fn layer<T: Serialize + DeserializeOwned>(
    base: &T,
    section: &str,
    file: &toml::Table,
    flags: Map<String, Value>,
) -> anyhow::Result<T> {
    let mut merged = match serde_json::to_value(base)? {
        Value::Object(m) => m,
        _ => unreachable!("configs serialize to objects"),
    };
    for (key, value) in file {
        if !merged.contains_key(key) {
            bail!(ConfigKeyError(format!("unknown key `{section}.{key}` in config file")));
        }
        merged.insert(key.clone(), serde_json::to_value(value)?);
    }
    for (key, value) in flags {
        debug_assert!(merged.contains_key(&key), "flag {key} has no config field");
        merged.insert(key, value);
    }
    serde_json::from_value(Value::Object(merged))
        .with_context(|| format!("invalid value in the `{section}` configuration"))
}

#[derive(Debug)]
pub struct ConfigKeyError(pub String);

impl std::fmt::Display for ConfigKeyError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigKeyError {}

/// Collects the flags that were actually given.
#[derive(Default)]
pub struct Flags(Map<String, Value>);

impl Flags {
    pub fn set<V: Serialize>(mut self, key: &str, value: Option<V>) -> Self {
        if let Some(v) = value {
            self.0.insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
        }
        self
    }

    pub fn into_map(self) -> Map<String, Value> {
        self.0
    }
}
