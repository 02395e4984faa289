//! Bottleneck adapters, their insertion positions, presets and parameter accounting.

mod accounting;
mod config;
mod model;
mod module;
mod position;
mod preset;

pub use accounting::{
    adapter_params, classifier_params, count_trainable_params, placement_params,
    trainable_millions, vtab_average_classes, VTAB_CLASSES,
};
pub use config::{AdapterConfig, Init, Position, Scaling};
pub use model::{AdaptedModel, LayerAdapters, ADAPTER_PREFIX, HEAD_PREFIX};
pub use module::{adapter_forward, init_adapter, AdapterModule};
pub use position::{wire_attention, wire_position};
pub use preset::{preset_by_name, preset_config, AdapterPlacement, Preset};
