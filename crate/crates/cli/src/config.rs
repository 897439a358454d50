//! Run configuration: a JSON document mirroring the model and loss
//! configurations plus optional default paths. Unknown keys are rejected;
//! the empty document reproduces the full published configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use useanet_core::error::{Error, Result};
use useanet_core::loss::LossConfig;
use useanet_core::model::ModelConfig;

use crate::args::Args;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub weights: Option<String>,
    pub output: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub paths: Paths,
}


impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Loads `--config` when given (defaults otherwise) and applies the
/// ablation switches on top.
pub fn resolve_config(args: &Args) -> Result<RunConfig> {
    let mut cfg = match args.get("--config") {
        Some(p) => RunConfig::load(Path::new(p))?,
        None => RunConfig::default(),
    };
    if args.has("--no-attention") {
        cfg.model.attention = false;
    }
    if args.has("--no-multi-branch") {
        cfg.model.multi_branch = false;
    }
    if args.has("--no-ultrasound-specific") {
        cfg.model.ultrasound_specific = false;
    }
    if args.has("--two-layer") {
        cfg.model.multi_scale = false;
    }
    cfg.model.validate()?;
    cfg.loss.validate()?;
    Ok(cfg)
}

pub const ABLATION_SWITCHES: [&str; 4] = [
    "--no-attention",
    "--no-multi-branch",
    "--no-ultrasound-specific",
    "--two-layer",
];
