//! Flat `key = value` configuration file.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! epochs = 10
//! init = "cooccurrence"
//! ```
//!
//! Values are TOML scalars. Tables and arrays are rejected, as are unknown
//! keys. A flag given on the command line overrides the file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;

pub const KEYS: &[&str] = &[
    "seed",
    "threads",
    // ingest / screen
    "screen_threshold",
    // training
    "context_size",
    "negatives",
    "max_contexts",
    "frequency_exponent",
    "dim",
    "epochs",
    "learning_rate",
    "min_learning_rate",
    "init",
    "freeze_drugs",
    // detection
    "ballast",
    "score_mode",
    "top",
    // baselines
    "alpha",
    "floor",
    "k_nn",
    "transe_dim",
    "margin",
    "transe_epochs",
    "transe_lr",
    "norm",
    // eval
    "macro",
    // synth-gen
    "patients",
    "conditions",
    "diseases_per_condition",
    "drugs_per_condition",
    "anomaly_rate",
];

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    table: toml::Table,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse()?;
        for (k, v) in &table {
            if !KEYS.contains(&k.as_str()) {
                bail!("unknown key '{k}'");
            }
            if v.is_table() || v.is_array() {
                bail!("key '{k}' must be a scalar");
            }
        }
        Ok(FileConfig { table })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        debug_assert!(KEYS.contains(&key), "unlisted key {key}");
        match self.table.get(key) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .with_context(|| format!("config key '{key}' has the wrong type")),
        }
    }

    /// Flag, then file, then `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// Like [`pick`](Self::pick) for settings without a default.
    pub fn pick_opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let c = FileConfig::parse("epochs = 9\n# note\nlearning_rate = 0.5\n").unwrap();
        assert_eq!(c.pick(Some(3usize), "epochs", 5).unwrap(), 3);
        assert_eq!(c.pick(None, "epochs", 5usize).unwrap(), 9);
        assert_eq!(c.pick(None, "dim", 64usize).unwrap(), 64);
        assert_eq!(c.pick(None, "learning_rate", 0.025).unwrap(), 0.5);
    }

    #[test]
    fn rejects_unknown_and_nested() {
        assert!(FileConfig::parse("epoch = 3").is_err());
        assert!(FileConfig::parse("[train]\nepochs = 3").is_err());
        assert!(FileConfig::parse("epochs = [1, 2]").is_err());
        let c = FileConfig::parse("epochs = \"many\"").unwrap();
        assert!(c.pick(None, "epochs", 5usize).is_err());
    }
}
