//! Central finite-difference gradient estimation.
//!
//! The independent oracle every analytic gradient in the crate is
//! checked against; it only ever evaluates the loss function, never a
//! backward pass. Also drives the `gradcheck` CLI command.

use crate::error::{Error, Result};
use crate::numerics::mlp::MlpParams;

/// Central-difference gradient of `loss_fn` at `params`, one coordinate
/// at a time: `(f(p + h e_i) - f(p - h e_i)) / 2h`.
pub fn finite_diff_grad<F>(loss_fn: F, params: &MlpParams, step: f64) -> Result<MlpParams>
where
    F: Fn(&MlpParams) -> f64,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::config(format!(
            "finite difference step must be > 0, got {step}"
        )));
    }
    let mut work = params.clone();
    let mut grad = params.zeros_like();
    for i in 0..params.param_count() {
        let original = work.get_param(i);
        work.set_param(i, original + step);
        let plus = loss_fn(&work);
        work.set_param(i, original - step);
        let minus = loss_fn(&work);
        work.set_param(i, original);
        grad.set_param(i, (plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Largest relative deviation between an analytic gradient and its
/// finite-difference estimate. Components where both sides are below
/// `floor` in magnitude count as exact agreement (the estimate's noise
/// floor dominates there).
pub fn max_relative_error(analytic: &MlpParams, numeric: &MlpParams, floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..analytic.param_count() {
        let a = analytic.get_param(i);
        let n = numeric.get_param(i);
        let denom = a.abs().max(n.abs());
        if denom < floor {
            continue;
        }
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}
