use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pathlab_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    /// sha256 of every input file, keyed by the path given on the command line.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
}

/// Collects inputs, outputs and warnings for one run, then writes either a
/// directory with a manifest or the primary artifact to stdout.
pub struct Run {
    command: String,
    started: Instant,
    out: Option<PathBuf>,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    artifacts: Vec<(String, Vec<u8>)>,
    warnings: Vec<String>,
}

impl Run {
    pub fn new(command: &str, out: Option<PathBuf>) -> Self {
        Run {
            command: command.to_string(),
            started: Instant::now(),
            out,
            config: serde_json::Value::Null,
            seed: None,
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) {
        self.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    /// Read an input file and record its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    /// Queue an artifact; the first one is what goes to stdout without `--out`.
    pub fn artifact(&mut self, name: &str, bytes: Vec<u8>) {
        self.artifacts.push((name.to_string(), bytes));
    }

    pub fn finish(self) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            outputs: self.artifacts.iter().map(|(n, b)| (n.clone(), sha256_hex(b))).collect(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            warnings: self.warnings,
        };
        match self.out {
            Some(dir) => {
                std::fs::create_dir_all(&dir).map_err(io)?;
                for (name, bytes) in &self.artifacts {
                    std::fs::write(dir.join(name), bytes).map_err(io)?;
                }
                let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
                std::fs::write(dir.join("manifest.json"), json).map_err(io)?;
            }
            None => {
                use std::io::Write;
                if let Some((_, bytes)) = self.artifacts.first() {
                    std::io::stdout().write_all(bytes).map_err(io)?;
                }
                let line = serde_json::to_string(&manifest).map_err(|e| Error::Io(e.to_string()))?;
                eprintln!("manifest: {line}");
            }
        }
        Ok(())
    }
}
