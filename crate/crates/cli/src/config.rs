//! Layered run configuration: built-in defaults, then a flat JSON config
//! file, then command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// A subcommand's configuration with desk-scale and paper-scale defaults.
pub trait RunConfig: Serialize + DeserializeOwned + Default {
    fn paper_scale() -> Self {
        Self::default()
    }

    fn master_seed(&self) -> u64;
}

/// Reads a flat JSON object (no nested objects).
pub fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(map) = value else {
        bail!("config {} must be a JSON object", path.display());
    };
    if let Some((k, _)) = map.iter().find(|(_, v)| v.is_object()) {
        bail!("config key {k:?} is nested; config files are flat key/value objects");
    }
    Ok(map)
}

/// Merges defaults < file < flags and deserializes, rejecting unknown keys.
pub fn resolve<T: RunConfig>(
    paper_scale: bool,
    file: Option<Map<String, Value>>,
    flags: Map<String, Value>,
) -> Result<T> {
    let base = if paper_scale { T::paper_scale() } else { T::default() };
    let Value::Object(mut merged) = serde_json::to_value(&base)? else {
        bail!("configuration must serialize to an object");
    };
    for layer in file.into_iter().chain(std::iter::once(flags)) {
        for (k, v) in layer {
            if !merged.contains_key(&k) {
                bail!("unknown configuration key {k:?}");
            }
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).context("invalid configuration")
}

/// Collects the flags a user actually passed.
#[derive(Default)]
pub struct Flags(Map<String, Value>);

impl Flags {
    pub fn set(&mut self, key: &str, value: Option<impl Serialize>) -> &mut Self {
        if let Some(v) = value {
            self.0
                .insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
        }
        self
    }

    pub fn set_true(&mut self, key: &str, on: bool) -> &mut Self {
        if on {
            self.0.insert(key.to_string(), Value::Bool(true));
        }
        self
    }

    pub fn into_map(self) -> Map<String, Value> {
        self.0
    }
}
