use std::collections::BTreeMap;

use super::config::TrainConfig;
use crate::error::{ForgeError, Result};
use crate::tensor::{ParamKind, Parameter, Scalar};

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// AdamW moment estimates for the trainable parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    moments: BTreeMap<String, Moments<T>>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    /// Zero moments for every trainable parameter in `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Parameter<T>>) -> Self {
        let moments = params
            .into_iter()
            .filter(|p| p.trainable)
            .map(|p| {
                let n = p.numel();
                (p.name.clone(), Moments { m: vec![T::zero(); n], v: vec![T::zero(); n] })
            })
            .collect();
        Self { moments, step: 0 }
    }

    /// Number of optimizer steps taken.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }

    pub fn first_moment(&self, name: &str) -> Option<&[T]> {
        self.moments.get(name).map(|m| m.m.as_slice())
    }

    pub fn second_moment(&self, name: &str) -> Option<&[T]> {
        self.moments.get(name).map(|m| m.v.as_slice())
    }
}

fn decays(p: &Parameter<impl Scalar>, cfg: &TrainConfig) -> bool {
    cfg.decay_norms_and_scales || !matches!(p.kind, ParamKind::Norm | ParamKind::Scale)
}

/// One decoupled-weight-decay Adam update of every trainable parameter.
/// Frozen parameters are skipped.
pub fn adamw_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Parameter<T>>,
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut todo = Vec::new();
    for p in params {
        if !p.trainable {
            continue;
        }
        if p.tensor.grad().is_none() {
            return Err(ForgeError::contract(format!("trainable parameter `{}` has no gradient", p.name)));
        }
        if !state.moments.contains_key(&p.name) {
            return Err(ForgeError::contract(format!(
                "parameter `{}` is trainable but has no optimizer state",
                p.name
            )));
        }
        todo.push(p);
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.betas.0), T::of(cfg.betas.1));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    for p in todo {
        let wd = T::of(if decays(p, cfg) { cfg.weight_decay } else { 0.0 });
        let mo = state.moments.get_mut(&p.name).expect("checked above");
        let grad = p.tensor.grad().expect("checked above").to_vec();
        let theta = p.tensor.data_mut();
        for i in 0..theta.len() {
            let g = grad[i];
            mo.m[i] = b1 * mo.m[i] + (T::one() - b1) * g;
            mo.v[i] = b2 * mo.v[i] + (T::one() - b2) * g * g;
            let m_hat = mo.m[i] / c1;
            let v_hat = mo.v[i] / c2;
            theta[i] = theta[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[i]);
        }
    }
    Ok(())
}
