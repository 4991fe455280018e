//! Versioned JSON checkpoints holding one trained mixture per char class.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mixture::{LambdaTable, MixtureState};
use crate::trainer::{EpochLoss, TrainConfig};

pub const FORMAT: &str = "glyphmix-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassModel {
    pub char_class: String,
    pub state: MixtureState<f64>,
    /// Spatial latents of the training examples, in manifest order.
    pub lambdas: LambdaTable<f64>,
    pub trace: Vec<EpochLoss>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_hash: String,
    pub models: Vec<ClassModel>,
}

pub fn config_hash(config: &TrainConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

impl Checkpoint {
    pub fn new(config: TrainConfig, models: Vec<ClassModel>) -> Result<Self> {
        Ok(Self {
            format: FORMAT.to_string(),
            version: VERSION,
            config_hash: config_hash(&config)?,
            config,
            models,
        })
    }

    pub fn model(&self, char_class: &str) -> Result<&ClassModel> {
        self.models
            .iter()
            .find(|m| m.char_class == char_class)
            .ok_or_else(|| Error::Checkpoint(format!("no model for char class '{char_class}'")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec(self)?;
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        if config_hash(&ck.config)? != ck.config_hash {
            return Err(Error::Checkpoint(format!("{}: config hash mismatch", path.display())));
        }
        for m in &ck.models {
            m.state.config.validate()?;
            if m.lambdas.components() != m.state.components() {
                return Err(Error::Checkpoint(format!(
                    "{}: lambda table of class '{}' has the wrong width",
                    path.display(),
                    m.char_class
                )));
            }
        }
        Ok(ck)
    }
}

/// `epoch,objective,kl_weight` rows.
pub fn write_loss_csv(path: impl AsRef<Path>, trace: &[EpochLoss]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,objective,kl_weight\n");
    for l in trace {
        out.push_str(&format!("{},{},{}\n", l.epoch, l.objective, l.kl_weight));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
