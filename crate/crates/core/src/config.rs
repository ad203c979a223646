//! Run configuration file: one TOML table per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::PreprocessConfig;
use crate::error::{Error, Result};
use crate::eval::{AblationConfig, EvalConfig};
use crate::layers::{AggregatorConfig, FilterBankConfig, TemporalKind};
use crate::model::{DelayNetConfig, FilterPosition};
use crate::plantsim::PlantConfig;
use crate::train::TrainConfig;

/// Model choice. Data dimensions come from the prepared samples; every
/// other `DelayNetConfig` field can override the preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    pub low_channels: Option<usize>,
    pub filter_low: Option<FilterBankConfig>,
    pub agg_low: Option<AggregatorConfig>,
    pub temporal: Option<TemporalKind>,
    pub filter_high: Option<FilterBankConfig>,
    pub agg_high: Option<AggregatorConfig>,
    /// Stages replaced by the identity.
    pub identity: Vec<FilterPosition>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "d_aff_aff_gau".into(),
            low_channels: None,
            filter_low: None,
            agg_low: None,
            temporal: None,
            filter_high: None,
            agg_high: None,
            identity: Vec::new(),
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, n_features: usize, past: usize, future: usize, n_commands: usize, n_targets: usize) -> Result<DelayNetConfig> {
        let mut c = DelayNetConfig::named(&self.preset, n_features, past, future, n_commands, n_targets)?;
        if let Some(v) = self.low_channels {
            c.low_channels = v;
        }
        if let Some(v) = &self.filter_low {
            c.filter_low = v.clone();
        }
        if let Some(v) = &self.agg_low {
            c.agg_low = v.clone();
        }
        if let Some(v) = self.temporal {
            c.temporal = v;
        }
        if let Some(v) = &self.filter_high {
            c.filter_high = v.clone();
        }
        if let Some(v) = &self.agg_high {
            c.agg_high = v.clone();
        }
        let c = c.with_identity(&self.identity);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub plant: PlantConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("config {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.train.validate()?;
        self.preprocess.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    /// Applies a command-line seed to the simulator and the trainer.
    pub fn with_seed(mut self, seed: Option<u64>) -> RunConfig {
        if let Some(s) = seed {
            self.plant.seed = s;
            self.train.seed = s;
        }
        self
    }
}
