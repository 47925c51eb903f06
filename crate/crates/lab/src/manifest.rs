//! Run directories and their manifests.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory for outputs.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub corpus_hash: Option<String>,
    pub target_hash: Option<String>,
    /// Privacy of the target, when trained privately.
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub noise_multiplier: Option<f64>,
    pub oracle_queries: Option<usize>,
    pub wall_time_secs: f64,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> anyhow::Result<FileEntry> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileEntry { path: path.display().to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
}

/// An output directory that remembers the hash of everything written to it.
pub struct RunDir {
    root: PathBuf,
    started: Instant,
    pub manifest: Manifest,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, config_hash: &str, seed: u64) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            started: Instant::now(),
            manifest: Manifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config_hash: config_hash.into(),
                seed,
                ..Manifest::default()
            },
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.retain(|e| e.path != name);
        self.manifest.outputs.push(FileEntry { path: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(path)
    }

    /// Renders into memory with `f`, then writes and records the file.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> anyhow::Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> anyhow::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn add_input(&mut self, path: &Path) -> anyhow::Result<()> {
        let e = hash_file(path)?;
        self.manifest.inputs.push(e);
        Ok(())
    }

    /// Writes `manifest.json`; the manifest does not list itself.
    pub fn finish(mut self) -> anyhow::Result<Manifest> {
        self.manifest.wall_time_secs = self.started.elapsed().as_secs_f64();
        let path = self.path(MANIFEST_FILE);
        let mut f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(&mut f, &self.manifest)?;
        writeln!(f)?;
        Ok(self.manifest)
    }
}

/// Rehashes every output listed in a manifest and returns those that no
/// longer match.
pub fn verify(root: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(root.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let mut bad = Vec::new();
    for e in &m.outputs {
        match std::fs::read(root.join(&e.path)) {
            Ok(b) if sha256_hex(&b) == e.sha256 => {}
            _ => bad.push(e.path.clone()),
        }
    }
    Ok(bad)
}
