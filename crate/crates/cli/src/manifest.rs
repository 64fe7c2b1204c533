use std::path::{Path, PathBuf};

use groundloom::dataforge::{file_sha256, write_json_atomic};
use groundloom::pipeline::{ExperimentConfig, StepSeeds};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> groundloom::Result<Self> {
        Ok(FileDigest { path: path.to_path_buf(), sha256: file_sha256(path)? })
    }
}

/// What a command did: enough to rerun it and to check its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: ExperimentConfig,
    pub seeds: StepSeeds,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, threads: usize) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().collect(),
            config: config.clone(),
            seeds: StepSeeds::derive(config.seed),
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn input(&mut self, path: &Path) -> groundloom::Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> groundloom::Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Writes `<out>/<command>.manifest.json` atomically and returns its path.
    pub fn write(&self, out: &Path) -> groundloom::Result<PathBuf> {
        let path = out.join(format!("{}.manifest.json", self.command));
        write_json_atomic(&path, self)?;
        Ok(path)
    }
}
