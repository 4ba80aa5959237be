use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::FloatMode;
use crate::training::TrainConfig;

use super::{io_error, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation and the files it left behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub float: Option<FloatMode>,
    /// Fully resolved configuration, as TOML.
    pub config: Option<String>,
    /// SHA-256 of every file under the output directory, by relative path.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        Manifest {
            command: command.to_string(),
            args: args.to_vec(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            overrides: Vec::new(),
            seed: None,
            float: None,
            config: None,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, cfg: &TrainConfig, overrides: Vec<String>) -> Self {
        self.seed = Some(cfg.seed);
        self.float = Some(cfg.float);
        self.config = Some(cfg.to_toml());
        self.overrides = overrides;
        self
    }

    pub fn with_float(mut self, float: FloatMode) -> Self {
        self.float = Some(float);
        self
    }

    /// Hashes the directory's files and writes `manifest.json` into it.
    pub fn write(mut self, dir: &Path) -> Result<(), CliError> {
        self.artifacts = hash_tree(dir)?;
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, json + "\n").map_err(|e| io_error(&path, e))
    }
}

fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| io_error(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| io_error(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(|e| io_error(&path, e))?;
            out.insert(rel, hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(out)
}
