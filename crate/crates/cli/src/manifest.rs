use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the canonical config; absent for config-free commands.
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub timestamp: String,
    /// Output file name to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
    /// Resolved values worth keeping (chosen shift, summary numbers).
    pub details: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config_sha256: Option<String>, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256,
            seed,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            files: BTreeMap::new(),
            details: BTreeMap::new(),
        }
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("detail serializes");
        self.details.insert(key.into(), v);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects output files in one directory and records their digests.
pub struct OutputDir<'a> {
    dir: &'a Path,
    manifest: RunManifest,
}

impl<'a> OutputDir<'a> {
    pub fn create(dir: &'a Path, manifest: RunManifest) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, manifest })
    }

    pub fn manifest_mut(&mut self) -> &mut RunManifest {
        &mut self.manifest
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.files.insert(name.into(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    pub fn finish(self) -> Result<RunManifest> {
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}
