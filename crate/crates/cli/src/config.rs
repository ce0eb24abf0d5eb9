//! Run configuration file.
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/synth"
//!
//! [data]
//! schema = "data/schema.toml"
//! train = "data/data.csv"
//! # test = "data/test.csv"      # when absent, `train` is split by `split`
//! split = [2, 1]
//!
//! [generator]                   # any subset of the generator fields
//! epochs = 600
//!
//! [encoder]
//! epochs = 200
//!
//! [eval]
//! density_bins = 20
//! ```
//!
//! Relative paths are resolved against the directory holding the file.
//! The top-level `seed` is copied into every stage.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fairtab::cvae::GeneratorConfig;
use fairtab::eval::EvalConfig;
use fairtab::faircl::EncoderConfig;
use fairtab::tabular::{load_csv, split, Dataset, DatasetSchema};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::invalid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub schema: PathBuf,
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split: [usize; 2],
}

fn default_split() -> [usize; 2] {
    [2, 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        for p in [&mut cfg.out_dir, &mut cfg.data.schema, &mut cfg.data.train] {
            *p = base.join(&*p);
        }
        if let Some(t) = cfg.data.test.as_mut() {
            *t = base.join(&*t);
        }
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).with_context(|| format!("loading {}", path.display()))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.generator.seed = seed;
        self.encoder.seed = seed;
        self.eval.seed = seed;
    }

    /// Checks every field and input path; nothing is trained before this
    /// passes.
    pub fn validate(&self) -> Result<()> {
        self.generator.validate().map_err(|e| invalid(format!("[generator] {e}")))?;
        self.encoder.validate().map_err(|e| invalid(format!("[encoder] {e}")))?;
        self.eval.probe.validate().map_err(|e| invalid(format!("[eval] {e}")))?;
        if self.eval.density_bins < 2 {
            return Err(invalid("[eval] density_bins must be at least 2"));
        }
        if self.data.test.is_none() && self.data.split.contains(&0) {
            return Err(invalid("[data] split parts must be positive"));
        }
        let mut inputs = vec![&self.data.schema, &self.data.train];
        inputs.extend(self.data.test.as_ref());
        for p in inputs {
            if !p.is_file() {
                return Err(invalid(format!("[data] no such file: {}", p.display())));
            }
        }
        DatasetSchema::load(&self.data.schema).map_err(|e| invalid(format!("[data] schema: {e}")))?;
        Ok(())
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let schema = DatasetSchema::load(&self.data.schema)?;
        let train = load_csv(&self.data.train, &schema)?;
        match &self.data.test {
            Some(p) => Ok((train, load_csv(p, &schema)?)),
            None => Ok(split(&train, (self.data.split[0], self.data.split[1]), self.seed)?),
        }
    }

    pub fn generator_path(&self) -> PathBuf {
        self.out_dir.join("generator.json")
    }

    pub fn encoder_dir(&self) -> PathBuf {
        self.out_dir.join("encoder")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_fill_defaults_and_resolve_paths() {
        let text = "seed = 4\nout_dir = \"out\"\n[data]\nschema = \"s.toml\"\ntrain = \"d.csv\"\n[encoder]\nepochs = 7\n";
        let cfg = RunConfig::from_toml_str(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.encoder.epochs, 7);
        assert_eq!(cfg.encoder.batch_size, EncoderConfig::default().batch_size);
        assert_eq!(cfg.generator.seed, 4);
        assert_eq!(cfg.out_dir, Path::new("/base/out"));
        assert_eq!(cfg.data.split, [2, 1]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "out_dir = \"o\"\n[data]\nschema = \"s\"\ntrain = \"t\"\n[encoder]\nepoch = 3\n";
        assert!(RunConfig::from_toml_str(text, Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_the_effective_config() {
        let text = "out_dir = \"o\"\n[data]\nschema = \"s\"\ntrain = \"t\"\n";
        let a = RunConfig::from_toml_str(text, Path::new(".")).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.encoder.toggles.align = false;
        assert_ne!(a.hash(), b.hash());
    }
}
