use std::path::{Path, PathBuf};

use glyphmix::mixture::Variant;
use glyphmix::report::EvalOptions;
use glyphmix::synth::PerturbConfig;
use glyphmix::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A JSON config file merged with command-line overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Single source of randomness; copied into the training and evaluation settings.
    pub seed: u64,
    /// Char classes synthesized by `synth`, one symbol each.
    pub classes: Vec<String>,
    pub canvas: usize,
    /// `png` or `pgm`.
    pub image_format: String,
    pub perturb: PerturbConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: vec!["E".into(), "F".into(), "H".into()],
            canvas: glyphmix::corpus::DEFAULT_CANVAS,
            image_format: "png".into(),
            perturb: PerturbConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            manifest: None,
            out: None,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub k: Option<usize>,
    pub epochs: Option<usize>,
    pub classes: Option<String>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        let o = overrides.clone();
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = o.variant {
            cfg.train.variant = v;
        }
        if let Some(v) = o.k {
            cfg.train.k = v;
        }
        if let Some(v) = o.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = o.classes {
            cfg.classes = v.chars().map(String::from).collect();
        }
        cfg.out = o.out.or(cfg.out);
        cfg.checkpoint = o.checkpoint.or(cfg.checkpoint);
        cfg.manifest = o.manifest.or(cfg.manifest);
        cfg.train.seed = cfg.seed;
        cfg.eval.seed = cfg.seed;
        if cfg.image_format != "png" && cfg.image_format != "pgm" {
            return Err(CliError::Runtime(format!(
                "image_format must be png or pgm, got {}",
                cfg.image_format
            )));
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Runtime("an output directory is required (--out)".into()))
    }

    pub fn manifest_path(&self) -> Result<&Path, CliError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| CliError::Runtime("a dataset manifest is required (--manifest)".into()))
    }

    pub fn checkpoint_path(&self) -> Result<&Path, CliError> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Runtime("a checkpoint is required (--checkpoint)".into()))
    }
}
