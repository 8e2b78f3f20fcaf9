//! Flat `key = value` run configuration files.
//!
//! CLI flags override file values, which override built-in defaults. Lines
//! starting with `#` and blank lines are ignored; unknown keys are rejected
//! so typos surface immediately.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

const ALLOWED_KEYS: &[&str] = &[
    "dict",
    "train",
    "test",
    "abbrev",
    "spelling",
    "out",
    "k",
    "alpha",
    "epochs",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "loss",
    "seed",
    "h",
    "buckets",
    "ngram_order",
    "max_chars",
    "sparse_l2_normalize",
];

#[derive(Debug, Default)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            if !ALLOWED_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "{}:{}: unknown config key {key:?}",
                    path.display(),
                    lineno + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Flag wins over config value wins over default.
    pub fn resolve<T: FromStr + Clone>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|_| CliError::Usage(format!("bad config value for {key:?}: {raw:?}"))),
            None => Ok(default),
        }
    }

    /// Optional path setting: flag wins over config; `None` when unset.
    pub fn resolve_path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.get(key).map(PathBuf::from))
    }

    /// Required path setting; verifies the file exists.
    pub fn require_input(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        let path = self
            .resolve_path(flag, key)
            .ok_or_else(|| CliError::Usage(format!("missing required setting --{key}")))?;
        require_exists(&path, key)?;
        Ok(path)
    }
}

pub fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} path {} does not exist",
            path.display()
        )))
    }
}
