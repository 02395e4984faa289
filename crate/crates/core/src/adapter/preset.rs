use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{AdapterConfig, Init, Position, Scaling};
use crate::error::{ForgeError, Result};

/// Adapter configurations from prior work, plus the proposed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    AdapterPlus,
    Houlsby,
    Pfeiffer,
    AdaptFormer,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Houlsby,
        Preset::Pfeiffer,
        Preset::AdaptFormer,
        Preset::AdapterPlus,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Preset::AdapterPlus => "adapter-plus",
            Preset::Houlsby => "houlsby",
            Preset::Pfeiffer => "pfeiffer",
            Preset::AdaptFormer => "adaptformer",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Preset {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "adapter-plus" | "adapter+" => Preset::AdapterPlus,
            "houlsby" => Preset::Houlsby,
            "pfeiffer" => Preset::Pfeiffer,
            "adaptformer" => Preset::AdaptFormer,
            other => return Err(ForgeError::config(format!("unknown preset `{other}`"))),
        })
    }
}

/// Where adapters go in every layer, and which backbone parts are tuned alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterPlacement {
    pub adapter: AdapterConfig,
    /// Also insert an adapter into the attention section.
    #[serde(default)]
    pub attention: bool,
    /// Train every backbone layer norm, including the final one.
    #[serde(default)]
    pub tune_backbone_norms: bool,
}

impl AdapterPlacement {
    /// One adapter per FFN section and nothing else tuned.
    pub fn ffn_only(adapter: AdapterConfig) -> Self {
        Self {
            adapter,
            attention: false,
            tune_backbone_norms: false,
        }
    }
}

/// Expands a preset at rank `rank`.
pub fn preset_config(preset: Preset, rank: usize) -> AdapterPlacement {
    match preset {
        Preset::AdapterPlus => AdapterPlacement::ffn_only(AdapterConfig::adapter_plus(rank)),
        Preset::Houlsby => AdapterPlacement {
            adapter: AdapterConfig::base(rank, Position::Intermediate),
            attention: true,
            tune_backbone_norms: true,
        },
        Preset::Pfeiffer => AdapterPlacement::ffn_only(AdapterConfig {
            use_layernorm: true,
            ..AdapterConfig::base(rank, Position::Post).with_init(Init::Bert)
        }),
        Preset::AdaptFormer => AdapterPlacement::ffn_only(
            AdapterConfig::base(rank, Position::Parallel)
                .with_init(Init::Lora)
                .with_scaling(Scaling::Fixed(0.1)),
        ),
    }
}

/// Parses a preset name and expands it.
pub fn preset_by_name(name: &str, rank: usize) -> Result<AdapterPlacement> {
    Ok(preset_config(name.parse()?, rank))
}
