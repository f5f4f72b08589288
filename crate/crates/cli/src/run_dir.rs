use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<ManifestEntry>,
}

/// Output directory of one command. Every file written through it is listed
/// in the manifest.
pub struct RunDir {
    root: PathBuf,
    command: String,
    files: Vec<ManifestEntry>,
}

impl RunDir {
    /// Creates `root` and echoes the effective config into it.
    pub fn create(root: &Path, command: &str, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("cannot create output directory {}", root.display()))?;
        let mut dir = Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            files: Vec::new(),
        };
        let mut echo = serde_json::to_vec_pretty(cfg)?;
        echo.push(b'\n');
        dir.write(CONFIG_FILE, &echo)?;
        Ok(dir)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(path)
    }

    /// Records a file some library call already wrote under the root.
    pub fn register(&mut self, rel: &str) -> Result<()> {
        let bytes = fs::read(self.path(rel))?;
        self.files.push(ManifestEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: self.command,
            files: self.files,
        };
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}
