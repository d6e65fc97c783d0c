//! Layered run configuration.
//!
//! Every tunable lives in one [`AppConfig`] tree with working defaults. A
//! TOML file may override any subset of fields (missing fields keep their
//! defaults), and the command line may override individual values on top of
//! that. `AppConfig::to_toml` prints the fully resolved tree, which doubles
//! as documentation of the file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::DecodeConfig;
use crate::losses::{LossConfig, TrainConfig};
use crate::synth::SynthConfig;
use crate::timeline::PyramidConfig;

/// Label-assignment tunables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignSettings {
    /// Center-sampling radius in units of the level-local stride.
    pub center_alpha: u32,
}

impl Default for AssignSettings {
    fn default() -> Self {
        Self { center_alpha: 3 }
    }
}

/// Head-architecture choices that are not dictated by the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadSettings {
    pub hidden_width: usize,
    /// Apply Gaussian confidence scaling to boundary tokens.
    pub confidence_scaling: bool,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

impl Default for HeadSettings {
    fn default() -> Self {
        Self { hidden_width: 64, confidence_scaling: true, init_seed: 0 }
    }
}

/// The full configuration tree, one section per pipeline stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub pyramid: PyramidConfig,
    pub assign: AssignSettings,
    pub heads: HeadSettings,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub synth: SynthConfig,
}

impl AppConfig {
    /// Cross-check every section; call after all overrides are applied.
    pub fn validate(&self) -> Result<(), String> {
        self.pyramid.validate().map_err(|e| format!("[pyramid] {e}"))?;
        if self.assign.center_alpha == 0 {
            return Err("[assign] center_alpha must be at least 1".into());
        }
        if self.heads.hidden_width == 0 {
            return Err("[heads] hidden_width must be at least 1".into());
        }
        self.loss.validate().map_err(|e| format!("[loss] {e}"))?;
        self.train.validate().map_err(|e| format!("[train] {e}"))?;
        self.decode.validate().map_err(|e| format!("[decode] {e}"))?;
        self.synth.validate().map_err(|e| format!("[synth] {e}"))?;
        Ok(())
    }

    /// Defaults overridden by `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| format!("{}: {e}", p.display()))?;
                toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
