use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

/// Which parameters are tuned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneMode {
    /// Classifier only.
    Linear,
    /// Every parameter.
    Full,
    /// Adapters and classifier (plus whatever the placement unfreezes).
    Adapter,
}

impl fmt::Display for TuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuneMode::Linear => "linear",
            TuneMode::Full => "full",
            TuneMode::Adapter => "adapter",
        })
    }
}

impl FromStr for TuneMode {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TuneMode::Linear),
            "full" => Ok(TuneMode::Full),
            "adapter" => Ok(TuneMode::Adapter),
            other => Err(ForgeError::config(format!("unknown tuning mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub mode: TuneMode,
    /// Apply weight decay to layer-norm parameters and learned scales too.
    pub decay_norms_and_scales: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            total_epochs: 100,
            warmup_epochs: 10,
            betas: (0.9, 0.999),
            eps: 1e-8,
            mode: TuneMode::Adapter,
            decay_norms_and_scales: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for full fine-tuning (lower learning rate).
    pub fn full_finetune() -> Self {
        Self {
            base_lr: 1e-4,
            mode: TuneMode::Full,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs >= self.total_epochs {
            return Err(ForgeError::config(format!(
                "warmup_epochs ({}) must be below total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.base_lr > 0.0 && self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(ForgeError::config("learning rate and eps must be positive, weight decay non-negative"));
        }
        if self.batch_size == 0 {
            return Err(ForgeError::config("batch_size must be positive"));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(ForgeError::config("betas must lie in [0, 1)"));
        }
        Ok(())
    }
}
