//! `manifest.json` in a run directory: every artifact with its digest and
//! the seed and config hash that produced it.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        if !p.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST);
        std::fs::write(&p, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", p.display()))
    }

    /// Drops entries under `prefix` (a file or directory), e.g. before a
    /// command rewrites them.
    pub fn forget(&mut self, prefix: &str) {
        self.artifacts
            .retain(|a| a.path != prefix && !a.path.starts_with(&format!("{prefix}/")));
    }

    /// Adds or replaces the entries for `files`.
    pub fn record(&mut self, dir: &Path, files: &[&Path], command: &str, seed: u64, config_hash: &str) -> Result<()> {
        for f in files {
            let rel = f.strip_prefix(dir).unwrap_or(f);
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            let entry = Artifact {
                sha256: sha256_file(f)?,
                path: rel.clone(),
                command: command.into(),
                seed,
                config_hash: config_hash.into(),
            };
            match self.artifacts.iter_mut().find(|a| a.path == rel) {
                Some(a) => *a = entry,
                None => self.artifacts.push(entry),
            }
        }
        Ok(())
    }
}

/// Loads, updates and saves the manifest of `dir` in one go.
pub fn update(dir: &Path, forget: &[&str], files: &[&Path], command: &str, seed: u64, config_hash: &str) -> Result<()> {
    let mut m = Manifest::load(dir)?;
    for p in forget {
        m.forget(p);
    }
    m.record(dir, files, command, seed, config_hash)?;
    m.save(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_replaces_and_forget_prunes() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("encoder");
        std::fs::create_dir(&sub).unwrap();
        let a = sub.join("a.json");
        let b = dir.path().join("b.csv");
        std::fs::write(&a, "x").unwrap();
        std::fs::write(&b, "y").unwrap();
        let mut m = Manifest::default();
        m.record(dir.path(), &[&a, &b], "t", 1, "h").unwrap();
        std::fs::write(&b, "z").unwrap();
        m.record(dir.path(), &[&b], "t", 2, "h").unwrap();
        assert_eq!(m.artifacts.len(), 2);
        assert_eq!(m.artifacts[0].path, "encoder/a.json");
        assert_eq!(m.artifacts[1].seed, 2);
        // sha256("z")
        assert!(m.artifacts[1].sha256.starts_with("594e519a"));
        m.forget("encoder");
        assert_eq!(m.artifacts.len(), 1);
    }
}
