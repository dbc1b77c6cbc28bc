//! Run manifests: everything needed to reproduce a command's outputs.

use std::path::Path;

use serde::Serialize;

use dramnet::digest::digest_file;
use dramnet::error::Result;

#[derive(Debug, Serialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub digest: String,
}

/// One manifest per run; re-running the command must reproduce identical
/// digests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Fully resolved configuration after config-file and flag merging.
    pub config: serde_json::Value,
    pub seeds: serde_json::Value,
    pub inputs: Vec<ArtifactRecord>,
    pub outputs: Vec<ArtifactRecord>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: serde_json::Value) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(ArtifactRecord {
            path: path.display().to_string(),
            digest: digest_file(path)?,
        });
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(ArtifactRecord {
            path: path.display().to_string(),
            digest: digest_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .expect("manifest serialization cannot fail");
        std::fs::write(path, json)?;
        Ok(())
    }
}
