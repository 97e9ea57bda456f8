//! Per-run manifest listing inputs and outputs with their content hashes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::formats::to_json;
use crate::fsio;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path, contents: &[u8]) -> Self {
        FileDigest {
            path: path.display().to_string(),
            sha256: fsio::sha256_hex(contents),
            bytes: contents.len() as u64,
        }
    }
}

/// Contains no timestamps, so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Collects outputs, writing each atomically as it is added.
pub struct Run {
    manifest: RunManifest,
    primary: Option<PathBuf>,
}

impl Run {
    pub fn new(command: &str, args: Vec<String>, seed: Option<u64>) -> Self {
        Run {
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                args,
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
            primary: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fsio::read(path)?;
        self.manifest.inputs.push(FileDigest::of(path, &bytes));
        Ok(())
    }

    /// The first output written is the primary one; the manifest goes next to it.
    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        fsio::write_atomic(path, bytes)?;
        self.manifest.outputs.push(FileDigest::of(path, bytes));
        if self.primary.is_none() {
            self.primary = Some(path.to_path_buf());
        }
        Ok(())
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Write `<primary>.manifest.json` and return its path.
    pub fn finish(self) -> Result<Option<PathBuf>> {
        let Some(primary) = self.primary else {
            return Ok(None);
        };
        let mut name = primary.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = primary.with_file_name(name);
        fsio::write_atomic(&path, &to_json(&self.manifest))?;
        Ok(Some(path))
    }
}
