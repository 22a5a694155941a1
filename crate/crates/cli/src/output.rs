use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GIT_REV: &str = env!("PROMPTLOOP_GIT_REV");

/// Provenance written next to every stage's outputs.
#[derive(Debug, Serialize)]
pub struct RunStamp<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub git_rev: &'static str,
    pub command: &'a str,
    pub run_id: String,
    pub seed: u64,
    pub config_sha256: String,
}

/// An output directory for one stage, holding its resolved config and stamp.
pub struct StageDir {
    pub path: PathBuf,
    pub run_id: String,
}

impl StageDir {
    pub fn create(path: PathBuf, command: &str, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&path).with_context(|| format!("cannot create output directory {}", path.display()))?;
        let text = config.to_toml()?;
        let digest = hex(&Sha256::digest(text.as_bytes()));
        let run_id = format!("{command}-{}", &digest[..12]);
        fs::write(path.join("config.toml"), &text)?;
        let stamp = RunStamp {
            tool: "promptloop",
            version: TOOL_VERSION,
            git_rev: GIT_REV,
            command,
            run_id: run_id.clone(),
            seed: config.seed,
            config_sha256: digest,
        };
        write_json(&path.join("run.json"), &stamp)?;
        Ok(Self { path, run_id })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

/// Render a float for CSV so that equal values always print identically.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
