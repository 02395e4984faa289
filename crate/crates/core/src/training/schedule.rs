use std::f64::consts::PI;

use super::config::TrainConfig;

/// Learning rate at optimizer step `step`.
///
/// Rises linearly from 0 to `base_lr` over the warm-up steps, then follows a
/// half cosine that reaches 0 at `total_epochs * steps_per_epoch`.
pub fn cosine_warmup_lr(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.total_epochs * steps_per_epoch;
    if step < warmup {
        return cfg.base_lr * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return 0.0;
    }
    let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    cfg.base_lr * 0.5 * (1.0 + (PI * progress).cos())
}
