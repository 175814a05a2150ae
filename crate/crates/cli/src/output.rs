//! CSV emission and the per-run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Formats a float with Rust's shortest round-trip representation; the
/// output never depends on locale.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Everything a run needs to be reproduced and audited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub duration_seconds: f64,
    pub outputs: Vec<String>,
    /// Headline numbers of the run.
    pub summary: BTreeMap<String, f64>,
}

/// Tracks the files written into one run directory.
pub struct RunDir {
    dir: PathBuf,
    outputs: Vec<String>,
    started: Instant,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Writes `rows` under `header` into `name`.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Lists a file the caller wrote into the run directory itself.
    pub fn record(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Writes `manifest.json` (listing itself) and returns the manifest.
    pub fn finish(
        mut self,
        subcommand: &str,
        config: &impl Serialize,
        seed: u64,
        summary: BTreeMap<String, f64>,
    ) -> Result<RunManifest> {
        self.outputs.push("manifest.json".to_string());
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            versions: versions(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs.clone(),
            // Undefined statistics (e.g. a rank correlation of a flat curve) are omitted.
            summary: summary.into_iter().filter(|(_, v)| v.is_finite()).collect(),
        };
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("eoe-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("eoe-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ])
}
