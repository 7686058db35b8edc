//! TOML run configuration. Values in the file take precedence over the
//! corresponding command-line flags.
//!
//! ```toml
//! seed = 7
//! deterministic = true
//!
//! [train]        # any training hyperparameter
//! patch_size = 32
//!
//! [synth]        # scene description
//! frame_count = 120
//!
//! [evaluate]
//! threshold = 0.8
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub deterministic: Option<bool>,
    pub synth: Option<toml::Table>,
    pub background: Option<toml::Table>,
    pub train: Option<toml::Table>,
    pub segment: Option<toml::Table>,
    pub evaluate: Option<toml::Table>,
    pub gradcheck: Option<toml::Table>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.at(path))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::usage(e.message().to_string()))
    }
}

/// Replaces the fields of `base` named in `table`; nested tables merge
/// key by key. Unknown keys are rejected by the target type.
pub fn overlay<T: Serialize + DeserializeOwned>(
    base: &T,
    table: Option<&toml::Table>,
    section: &str,
) -> Result<T> {
    let Some(table) = table else {
        return serde_json::from_value(serde_json::to_value(base).map_err(bad(section))?)
            .map_err(bad(section));
    };
    let mut value = serde_json::to_value(base).map_err(bad(section))?;
    let patch = serde_json::to_value(table).map_err(bad(section))?;
    merge(&mut value, patch);
    serde_json::from_value(value).map_err(bad(section))
}

fn bad(section: &str) -> impl Fn(serde_json::Error) -> CliError + '_ {
    move |e| CliError::usage(format!("config [{section}]: {e}"))
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}
