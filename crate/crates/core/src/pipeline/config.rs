use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::efe::{default_budget, EfeVariant};
use crate::error::{Error, Result};
use crate::umix::UmixConfig;
use crate::uncertainty::McConfig;

use super::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Dataset location; the CLI `--data` flag overrides it.
    pub data: Option<String>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temporal_selection: bool,
    pub spatial_selection: bool,
    pub umix: UmixConfig,
    pub mc: McConfig,
    /// EFE variant used by the selector while training. Evaluation always
    /// ranks frames by information gain.
    pub efe_mode: EfeVariant,
    /// Frames observed per sequence; `None` means `max(4, ceil(T / 8))`.
    pub budget: Option<usize>,
    /// Epochs at the start that use the uniform-stride selector.
    pub warmup_epochs: usize,
    pub beta_kl: f64,
    pub confusion_smoothing: f64,
    pub model: ModelConfig,
    pub seed: u64,
    /// When false, the `seconds` metrics column is written as 0 so that
    /// repeated runs produce identical files.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: None,
            epochs: 50,
            batch_size: 32,
            learning_rate: 3e-4,
            temporal_selection: true,
            spatial_selection: true,
            umix: UmixConfig::default(),
            mc: McConfig::default(),
            efe_mode: EfeVariant::InfoGain,
            budget: None,
            warmup_epochs: 1,
            beta_kl: 0.01,
            confusion_smoothing: 1.0,
            model: ModelConfig::default(),
            seed: 0,
            record_wall_clock: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.budget == Some(0) {
            return bad("budget must be ≥ 1".into());
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return bad(format!("beta_kl must be ≥ 0, got {}", self.beta_kl));
        }
        if !(self.confusion_smoothing > 0.0 && self.confusion_smoothing.is_finite()) {
            return bad(format!("confusion_smoothing must be positive, got {}", self.confusion_smoothing));
        }
        self.umix.validate()?;
        self.mc.validate()?;
        self.model.validate()
    }

    pub fn budget_for(&self, frames: usize) -> usize {
        self.budget.unwrap_or_else(|| default_budget(frames)).min(frames)
    }

    /// Copy with the three ablation switches set.
    pub fn with_flags(&self, umix: bool, temporal: bool, spatial: bool) -> Self {
        let mut cfg = self.clone();
        cfg.umix.enabled = umix;
        cfg.temporal_selection = temporal;
        cfg.spatial_selection = spatial;
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
