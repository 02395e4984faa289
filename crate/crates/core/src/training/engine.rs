use super::config::{TrainConfig, TuneMode};
use super::optim::{adamw_step, OptimizerState};
use super::schedule::cosine_warmup_lr;
use crate::adapter::AdaptedModel;
use crate::autodiff::Tape;
use crate::data::{Dataset, Preprocess};
use crate::error::{ForgeError, Result};
use crate::tensor::{Rng, Scalar};
use crate::vit::{ForwardCtx, Module};

/// Evaluation batch size; affects speed only.
const EVAL_BATCH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Marks the parameters tuned under `mode` as trainable and everything else
/// as frozen. Returns the trainable parameter names.
pub fn select_trainables<T: Scalar>(model: &mut AdaptedModel<T>, mode: TuneMode) -> Result<Vec<String>> {
    match mode {
        TuneMode::Full => model.set_trainable(true),
        TuneMode::Linear => {
            model.set_trainable(false);
            model.head.set_trainable(true);
        }
        TuneMode::Adapter => {
            if model.placement.is_none() {
                return Err(ForgeError::contract("adapter mode needs a model with adapters"));
            }
            model.set_trainable(true);
            model.freeze_backbone();
        }
    }
    Ok(model
        .params()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.name.clone())
        .collect())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `logits` whose argmax equals the label.
pub fn accuracy<T: Scalar>(logits: &[T], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || logits.len() % labels.len() != 0 {
        return Err(ForgeError::contract(format!(
            "{} logits do not split into {} rows",
            logits.len(),
            labels.len()
        )));
    }
    let c = logits.len() / labels.len();
    let correct = logits
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// One shuffled pass over `data` with AdamW updates.
pub fn train_epoch<T: Scalar>(
    model: &mut AdaptedModel<T>,
    state: &mut OptimizerState<T>,
    data: &Dataset,
    prep: &Preprocess,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(ForgeError::contract("cannot train on an empty dataset"));
    }
    let spe = data.len().div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);
    let (mut loss_sum, mut correct) = (0.0, 0.0);
    for chunk in order.chunks(cfg.batch_size) {
        let (images, labels) = prep.batch::<T>(data, chunk, Some(rng))?;
        model.zero_grad();
        {
            let tape = Tape::new();
            let logits = model.forward(&tape, tape.constant(images), &mut ForwardCtx::train(rng))?;
            let loss = logits.cross_entropy(&labels)?;
            let n = chunk.len() as f64;
            loss_sum += loss.item().as_f64() * n;
            correct += accuracy(&logits.data(), &labels)? * n;
            tape.backward(loss)?;
            model.absorb_grads(&tape);
        }
        let lr = cosine_warmup_lr(state.step() as usize + 1, spe, cfg);
        adamw_step(model.params_mut(), state, lr, cfg)?;
        model.zero_grad();
    }
    Ok(EpochMetrics {
        loss: loss_sum / data.len() as f64,
        accuracy: correct / data.len() as f64,
    })
}

/// Eval-mode logits `[n, c]` for every sample, in dataset order.
pub fn predict_logits<T: Scalar>(model: &AdaptedModel<T>, data: &Dataset, prep: &Preprocess) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(data.len() * model.num_classes());
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut rng = Rng::new(0);
    for chunk in idx.chunks(EVAL_BATCH) {
        let (images, _) = prep.batch::<T>(data, chunk, None)?;
        out.extend(model.logits(&images, &mut ForwardCtx::eval(&mut rng))?.into_data());
    }
    Ok(out)
}

/// Top-1 accuracy in `[0, 1]`.
pub fn evaluate<T: Scalar>(model: &AdaptedModel<T>, data: &Dataset, prep: &Preprocess) -> Result<f64> {
    if data.is_empty() {
        return Err(ForgeError::contract("cannot evaluate on an empty dataset"));
    }
    accuracy(&predict_logits(model, data, prep)?, &data.labels())
}

/// Full training run: selects trainables, then `total_epochs` epochs.
pub fn fit<T: Scalar>(
    model: &mut AdaptedModel<T>,
    data: &Dataset,
    prep: &Preprocess,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    select_trainables(model, cfg.mode)?;
    let mut state = OptimizerState::new(model.params());
    (0..cfg.total_epochs)
        .map(|_| train_epoch(model, &mut state, data, prep, cfg, rng))
        .collect()
}
