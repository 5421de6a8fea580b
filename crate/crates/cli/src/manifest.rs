//! `run.json`: what a command was asked to do and with which parameters.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use d3a::model::EngineConfig;
use d3a::sim::WorldSpec;
use serde::Serialize;

pub const RUN_MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world_spec: Option<WorldSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine_config: Option<EngineConfig>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u128,
    pub elapsed_ms: f64,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl RunManifest {
    pub fn start(args: Vec<String>) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            args,
            seed: None,
            world_spec: None,
            engine_config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
            elapsed_ms: 0.0,
            clock: Some(Instant::now()),
        }
    }

    /// Writes `run.json` into `dir`.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        self.write_to(&dir.join(RUN_MANIFEST_FILE))
    }

    pub fn write_to(&mut self, path: &Path) -> Result<()> {
        self.elapsed_ms = self.clock.map_or(0.0, |c| c.elapsed().as_secs_f64() * 1e3);
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
    }
}
