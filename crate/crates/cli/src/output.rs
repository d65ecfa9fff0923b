//! Output directories: atomic file writes and the per-command manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use diffcdr::tensor_core::checkpoint::write_atomic;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    version: &'a str,
    /// SHA-256 of every file the command wrote, by file name.
    files: &'a BTreeMap<String, String>,
}

/// Collects the files of one command run and finishes with a manifest.
pub struct OutDir {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutDir {
    pub fn new(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Records a file some other writer already placed in the directory.
    pub fn record(&mut self, name: &str) -> anyhow::Result<()> {
        let bytes = std::fs::read(self.dir.join(name)).with_context(|| format!("reading back {name}"))?;
        self.files.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn finish(self, command: &str, config_hash: &str, seed: u64) -> anyhow::Result<()> {
        let manifest = Manifest {
            command,
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.dir.join(MANIFEST), text.as_bytes())?;
        Ok(())
    }
}
