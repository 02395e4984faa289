//! Central-difference gradient oracle.

use super::{Tape, Var};
use crate::error::{ForgeError, Result};
use crate::tensor::Tensor;

/// Relative error with a `max(|a|, |b|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

pub(crate) fn check_step(h: f64) -> Result<()> {
    if !(1e-6..=1e-4).contains(&h) {
        return Err(ForgeError::contract(format!(
            "finite-difference step {h} outside [1e-6, 1e-4]"
        )));
    }
    Ok(())
}

/// Compares the tape gradient of `f` at `x` against central differences
/// and returns the largest elementwise relative error.
pub fn finite_diff_grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    check_step(h)?;
    let tape = Tape::new();
    let input = tape.leaf(&x.clone().with_requires_grad(true));
    let loss = f(&tape, input)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(input)
        .map(|g| g.into_data())
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |probe: &Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(probe.clone());
        Ok(f(&tape, v)?.item())
    };
    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}
