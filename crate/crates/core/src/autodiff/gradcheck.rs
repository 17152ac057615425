use std::collections::HashMap;

use super::{Tape, Tensor2, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of `loss` with respect to the parameter
/// `param` against central differences with step `h`, replaying the tape for
/// each perturbation. Returns the maximum relative error
/// `|g_auto - g_fd| / max(1e-12, |g_auto| + |g_fd|)` over the entries.
///
/// The tape is left holding the original parameter values.
pub fn finite_diff_check(tape: &mut Tape, loss: Var, param: &str, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Precondition(format!(
            "finite-difference step must be > 0, got {h}"
        )));
    }
    let pv = tape
        .param_var(param)
        .ok_or_else(|| Error::UnknownInput(param.to_string()))?;
    let original = tape.value(pv).clone();
    let analytic = tape
        .backward(loss)?
        .get(param)
        .cloned()
        .unwrap_or_else(|| Tensor2::zeros(original.rows(), original.cols()));

    let mut feeds = HashMap::with_capacity(1);
    let mut eval = |tape: &mut Tape, value: Tensor2| -> Result<f64> {
        feeds.insert(param.to_string(), value);
        tape.forward(&feeds)?;
        Ok(tape.value(loss).item())
    };

    let mut worst = 0.0f64;
    for i in 0..original.len() {
        let mut plus = original.clone();
        plus.data_mut()[i] += h;
        let mut minus = original.clone();
        minus.data_mut()[i] -= h;
        let fd = (eval(tape, plus)? - eval(tape, minus)?) / (2.0 * h);
        let g = analytic.data()[i];
        let rel = (g - fd).abs() / (g.abs() + fd.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    eval(tape, original)?;
    Ok(worst)
}
