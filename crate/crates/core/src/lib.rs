//! Bottleneck adapters for vision transformers.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense tensors, seeded sampling and a tape
//!   based reverse-mode engine with a finite-difference oracle.
//! * [`vit`]: a configurable pre-norm vision transformer with stochastic
//!   depth, parameter freezing and a bit-exact checkpoint format.
//! * [`adapter`]: adapter modules, their insertion positions,
//!   initializations, presets and closed-form parameter accounting.
//! * [`training`]: AdamW, the cosine warm-up schedule and train/eval loops.
//! * [`data`]: normalization, augmentation, synthetic transfer tasks and
//!   image-folder ingestion.
//! * [`experiment`]: configuration parsing, seeded runs, ablation drivers
//!   and result emission.

pub mod autodiff;
pub mod error;
pub mod tensor;
pub mod vit;
pub mod adapter;
pub mod data;
pub mod training;
pub mod experiment;

pub use error::{ForgeError, Result};
