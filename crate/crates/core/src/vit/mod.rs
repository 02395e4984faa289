//! Vision-transformer backbone.

mod checkpoint;
mod config;
mod gradcheck;
mod layers;
mod model;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointData, StoredTensor, CHECKPOINT_VERSION};
pub use gradcheck::module_grad_check;
pub use config::{stochastic_depth_rate, BackboneConfig};
pub use layers::{
    apply_dropout, apply_stochastic_depth, attention_forward, attention_section, ffn_forward,
    layer_forward, ForwardCtx, LayerNorm, Linear, Module, TransformerLayer, LN_EPS,
};
pub(crate) use model::cls_features;
pub use model::{VisionTransformer, BACKBONE_PREFIX};
