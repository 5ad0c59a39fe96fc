//! `--config` merging and run manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "GAMMASPOT_OUT";

/// Overlays explicitly given flags on top of a JSON config. Flags are
/// serialized with unset options skipped, so only what the user typed wins.
/// A run manifest is accepted as a config: its `config` object is used.
pub fn merge<A: Serialize + DeserializeOwned>(flags: &A, config: Option<&Path>) -> Result<A> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut base: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if base.get("command").is_some() {
        if let Some(inner) = base.get("config") {
            base = inner.clone();
        }
    }
    let Value::Object(mut base) = base else {
        bail!("config {} must be a JSON object", path.display());
    };
    if let Value::Object(over) = serde_json::to_value(flags)? {
        for (k, v) in over {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    base.remove("config");
    serde_json::from_value(Value::Object(base)).with_context(|| {
        format!(
            "config {} does not match the command's options",
            path.display()
        )
    })
}

pub fn default_out(explicit: Option<&Path>, command: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(command)
}

pub fn unix_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Everything needed to replay a command: pass the file back as `--config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: Value,
    pub seeds: Map<String, Value>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            seeds: Map::new(),
            started_unix: unix_seconds(),
            finished_unix: 0.0,
            outputs: Vec::new(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value.into());
    }

    /// Records an output after checking it exists.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            bail!("expected output {} was not written", path.display());
        }
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = unix_seconds();
        let path = dir.join("run.json");
        write_json(&path, &self)?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    gammaspot::grid::write_atomic(path, text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}
