use super::layers::Module;
use crate::autodiff::{relative_error, Tape, Var};
use crate::autodiff::check_step;
use crate::error::Result;
use crate::tensor::Rng;

/// Central-difference check of every trainable parameter of `model`.
///
/// Tensors with more than `max_coords` entries are probed at that many random
/// coordinates. Returns the largest relative error seen.
pub fn module_grad_check<M, F>(
    model: &mut M,
    loss: F,
    h: f64,
    max_coords: usize,
    rng: &mut Rng,
) -> Result<f64>
where
    M: Module<f64>,
    F: for<'t> Fn(&M, &'t Tape<f64>) -> Result<Var<'t, f64>>,
{
    check_step(h)?;
    model.zero_grad();
    {
        let tape = Tape::new();
        let l = loss(model, &tape)?;
        tape.backward(l)?;
        model.absorb_grads(&tape);
    }
    let analytic: Vec<Option<Vec<f64>>> = model
        .params()
        .iter()
        .map(|p| {
            p.trainable
                .then(|| p.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
        })
        .collect();
    model.zero_grad();

    let eval = |m: &M| -> Result<f64> {
        let tape = Tape::new();
        Ok(loss(m, &tape)?.item())
    };
    let mut worst = 0.0_f64;
    for (pi, grad) in analytic.iter().enumerate() {
        let Some(grad) = grad else { continue };
        let coords: Vec<usize> = if grad.len() <= max_coords {
            (0..grad.len()).collect()
        } else {
            (0..max_coords).map(|_| rng.below(grad.len())).collect()
        };
        for i in coords {
            let orig = model.params()[pi].tensor.data()[i];
            model.params_mut()[pi].tensor.data_mut()[i] = orig + h;
            let up = eval(model)?;
            model.params_mut()[pi].tensor.data_mut()[i] = orig - h;
            let down = eval(model)?;
            model.params_mut()[pi].tensor.data_mut()[i] = orig;
            worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}
