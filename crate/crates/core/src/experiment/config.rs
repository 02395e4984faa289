use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::{preset_config, AdapterConfig, AdapterPlacement, Init, Position, Preset, Scaling};
use crate::data::{AugmentPolicy, AugmentationSpec, NormalizationSpec, Preprocess, SynthSpec};
use crate::error::{ForgeError, Result};
use crate::tensor::DType;
use crate::training::{TrainConfig, TuneMode};
use crate::vit::BackboneConfig;

/// Adapter choice: a preset, a custom structure, or a preset with overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_bias: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub use_layernorm: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Init>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_path_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
}

fn default_rank() -> usize {
    8
}

impl Default for AdapterSection {
    fn default() -> Self {
        Self::preset(Preset::AdapterPlus, default_rank())
    }
}

impl AdapterSection {
    pub fn preset(preset: Preset, rank: usize) -> Self {
        Self {
            preset: Some(preset),
            rank,
            position: None,
            use_bias: None,
            use_layernorm: None,
            scaling: None,
            init: None,
            drop_path_rate: None,
            dropout_rate: None,
        }
    }

    /// Spells out every field of `config`.
    pub fn custom(config: &AdapterConfig) -> Self {
        Self {
            preset: None,
            rank: config.rank,
            position: Some(config.position),
            use_bias: Some(config.use_bias),
            use_layernorm: Some(config.use_layernorm),
            scaling: Some(config.scaling),
            init: Some(config.init),
            drop_path_rate: Some(config.drop_path_rate),
            dropout_rate: Some(config.dropout_rate),
        }
    }

    /// Preset (or the base adapter) with the explicitly given fields applied on top.
    pub fn placement(&self) -> Result<AdapterPlacement> {
        let mut p = match self.preset {
            Some(preset) => preset_config(preset, self.rank),
            None => AdapterPlacement::ffn_only(AdapterConfig::base(self.rank, Position::Post)),
        };
        let a = &mut p.adapter;
        a.position = self.position.unwrap_or(a.position);
        a.use_bias = self.use_bias.unwrap_or(a.use_bias);
        a.use_layernorm = self.use_layernorm.unwrap_or(a.use_layernorm);
        a.scaling = self.scaling.unwrap_or(a.scaling);
        a.init = self.init.unwrap_or(a.init);
        a.drop_path_rate = self.drop_path_rate.unwrap_or(a.drop_path_rate);
        a.dropout_rate = self.dropout_rate.unwrap_or(a.dropout_rate);
        a.validate()?;
        Ok(p)
    }
}

/// Image folders of the target task (class-per-subdirectory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FolderData {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Seed of the synthetic generator; fixed across experiment seeds.
    pub seed: u64,
    pub synthetic: SynthSpec,
    /// Replaces the synthetic target task when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folder: Option<FolderData>,
    pub augmentation: AugmentPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synthetic: SynthSpec::default(),
            folder: None,
            augmentation: AugmentPolicy::VtabStyle,
        }
    }
}

/// How the frozen backbone is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Full training epochs on the synthetic source task; 0 keeps the random init.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Stochastic-depth rate of the last layer during pretraining.
    pub drop_path_max: f64,
    pub seed: u64,
    pub normalization: NormalizationSpec,
    /// Load the backbone from this checkpoint instead of pretraining.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Directory where pretrained backbones are cached between processes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            warmup_epochs: 3,
            base_lr: 1e-3,
            weight_decay: 0.05,
            batch_size: 64,
            drop_path_max: 0.1,
            seed: 0,
            normalization: NormalizationSpec::inception(),
            checkpoint: None,
            cache_dir: None,
        }
    }
}

impl PretrainConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            base_lr: self.base_lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            total_epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            mode: TuneMode::Full,
            ..TrainConfig::default()
        }
    }
}

/// Desk-scale training defaults: 20 epochs with 2 warm-up epochs.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        total_epochs: 20,
        warmup_epochs: 2,
        ..TrainConfig::default()
    }
}

fn desk_train_overrides<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<TrainConfig, D::Error> {
    use serde::de::Error;
    let given = serde_json::Value::deserialize(de)?;
    let mut merged = serde_json::to_value(desk_train_config()).map_err(D::Error::custom)?;
    match (given, &mut merged) {
        (serde_json::Value::Object(given), serde_json::Value::Object(base)) => base.extend(given),
        _ => return Err(D::Error::custom("`train` must be a table")),
    }
    serde_json::from_value(merged).map_err(D::Error::custom)
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// A complete, serializable experiment. A run is a pure function of this record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Directory receiving one full and one adapter-only checkpoint per seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    #[serde(default)]
    pub precision: DType,
    #[serde(default = "NormalizationSpec::inception")]
    pub normalization: NormalizationSpec,
    /// Train on train + val; the reported val accuracy is then optimistic.
    #[serde(default)]
    pub include_val_in_train: bool,
    #[serde(default = "BackboneConfig::toy")]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub adapter: AdapterSection,
    /// Missing keys take the desk-scale values of [`desk_train_config`].
    #[serde(default = "desk_train_config", deserialize_with = "desk_train_overrides")]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            seeds: default_seeds(),
            output: None,
            checkpoint_dir: None,
            precision: DType::F32,
            normalization: NormalizationSpec::inception(),
            include_val_in_train: false,
            backbone: BackboneConfig::toy(),
            adapter: AdapterSection::default(),
            train: desk_train_config(),
            data: DataConfig::default(),
            pretrain: PretrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(ForgeError::config("at least one seed is required"));
        }
        if self.data.synthetic.image_size != self.backbone.image_size && self.data.folder.is_none() {
            return Err(ForgeError::config(format!(
                "synthetic image size {} differs from backbone image size {}",
                self.data.synthetic.image_size, self.backbone.image_size
            )));
        }
        if self.train.mode == TuneMode::Adapter {
            let p = self.adapter.placement()?;
            if p.adapter.rank > self.backbone.hidden_dim {
                return Err(ForgeError::config("adapter rank exceeds the hidden dimension"));
            }
        }
        Ok(())
    }

    /// Adapter placement when training in adapter mode.
    pub fn placement(&self) -> Result<Option<AdapterPlacement>> {
        match self.train.mode {
            TuneMode::Adapter => Ok(Some(self.adapter.placement()?)),
            TuneMode::Linear | TuneMode::Full => Ok(None),
        }
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess::new(
            self.normalization,
            AugmentationSpec {
                policy: self.data.augmentation,
                target_size: self.backbone.image_size,
            },
        )
    }

    /// Short digest of everything that affects a run except the seed list and output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.output = None;
        c.checkpoint_dir = None;
        c.pretrain.cache_dir = None;
        digest(&c)
    }
}

pub(crate) fn digest<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_vec(value).expect("configs serialize");
    let h = Sha256::digest(&json);
    h.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Parses TOML text. Unknown keys, missing keys and type mismatches report the key path.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::new(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ForgeError::Parse {
            path,
            message: inner.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// TOML rendering of a config, accepted by [`parse_config_str`].
pub fn config_to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| ForgeError::config(e.to_string()))
}
