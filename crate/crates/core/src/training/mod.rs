//! AdamW, the warm-up cosine schedule and train/eval loops.

mod config;
mod engine;
mod optim;
mod schedule;

pub use config::{TrainConfig, TuneMode};
pub use engine::{
    accuracy, argmax, evaluate, fit, predict_logits, select_trainables, train_epoch, EpochMetrics,
};
pub use optim::{adamw_step, OptimizerState};
pub use schedule::cosine_warmup_lr;
