use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: serde_json::Value,
    pub versions: Versions,
    pub started_unix_s: f64,
    pub wall_time_s: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Versions {
    pub cli: String,
    pub format: u32,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config,
            versions: Versions { cli: env!("CARGO_PKG_VERSION").into(), format: 1 },
            started_unix_s: now_unix(),
            wall_time_s: 0.0,
            seed,
        }
    }

    /// Writes next to `primary` as `<primary>.manifest.json`.
    pub fn write_beside(mut self, primary: &Path) -> Result<()> {
        self.wall_time_s = now_unix() - self.started_unix_s;
        let path = sibling(primary, "manifest.json");
        let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(f, &self)?;
        Ok(())
    }
}

/// `dir/name.ext` -> `dir/name.ext.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
