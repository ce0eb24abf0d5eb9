//! Versioned JSON checkpoints.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::mlp::{MlpParams, MlpSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "fairtab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A payload that can be written to and read from a checkpoint file.
pub trait Checkpointable: Serialize + DeserializeOwned {
    const KIND: &'static str;

    /// Shape validation run after loading.
    fn validate(&self) -> Result<()>;
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: String,
    payload: T,
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    format: &'a str,
    version: u32,
    kind: &'a str,
    payload: &'a T,
}

pub fn to_string<T: Checkpointable>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(&EnvelopeRef {
        format: CHECKPOINT_FORMAT,
        version: CHECKPOINT_VERSION,
        kind: T::KIND,
        payload: value,
    })?)
}

pub fn from_str<T: Checkpointable>(text: &str) -> Result<T> {
    let env: Envelope<serde_json::Value> = serde_json::from_str(text)?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", env.format)));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {} not supported (expected {CHECKPOINT_VERSION})",
            env.version
        )));
    }
    if env.kind != T::KIND {
        return Err(Error::Checkpoint(format!(
            "expected a {} checkpoint, found {}",
            T::KIND,
            env.kind
        )));
    }
    let value: T = serde_json::from_value(env.payload)?;
    value.validate()?;
    Ok(value)
}

pub fn save<T: Checkpointable>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_string(value)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Checkpointable>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

/// A single network with its optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub spec: MlpSpec,
    pub params: MlpParams,
    pub optimizer: Option<AdamState>,
}

impl Checkpointable for NetworkCheckpoint {
    const KIND: &'static str = "network";

    fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.params.check_against(&self.spec)?;
        if let Some(opt) = &self.optimizer {
            let (m, v) = opt.moments();
            let shapes: Vec<_> = self.params.tensors().iter().map(|t| t.dim()).collect();
            for moments in [m, v] {
                if !moments.is_empty()
                    && moments.iter().map(|t| t.dim()).collect::<Vec<_>>() != shapes
                {
                    return Err(Error::Shape("optimizer moments do not match parameters".into()));
                }
            }
        }
        Ok(())
    }
}
