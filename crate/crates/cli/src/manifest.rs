//! Output directory bookkeeping: every written file is hashed, and each
//! command finishes by writing `run_manifest.toml` with its inputs and
//! outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run_manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| CliError::io(path, e))?))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    schema_version: u32,
    seed: u64,
    config_sha256: &'a str,
    inputs: &'a [FileHash],
    outputs: &'a [FileHash],
}

/// Writer for one command's output directory.
pub struct Outputs {
    pub dir: PathBuf,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes.as_ref()).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(FileHash {
            path: rel.to_string(),
            sha256: sha256_hex(bytes.as_ref()),
        });
        Ok(())
    }

    /// Records a file some library call already wrote under the directory.
    pub fn record(&mut self, rel: &str) -> CliResult<()> {
        let sha256 = hash_file(&self.dir.join(rel))?;
        self.outputs.push(FileHash {
            path: rel.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn input(&mut self, label: &str, sha256: String) {
        self.inputs.push(FileHash {
            path: label.to_string(),
            sha256,
        });
    }

    pub fn input_file(&mut self, path: &Path) -> CliResult<()> {
        let sha = hash_file(path)?;
        self.input(&path.display().to_string(), sha);
        Ok(())
    }

    pub fn finish(self, command: &str, seed: u64, config_text: &str) -> CliResult<()> {
        let manifest = RunManifest {
            command,
            schema_version: crate::config::SCHEMA_VERSION,
            seed,
            config_sha256: &sha256_hex(config_text.as_bytes()),
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let text = toml::to_string(&manifest).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
        let path = self.dir.join(RUN_MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
