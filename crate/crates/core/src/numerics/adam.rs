//! Adam optimizer over `MlpParams`.

use crate::error::{Error, Result};
use crate::numerics::mlp::MlpParams;

/// Moment buffers and step counter for one network. Buffers share the
/// network's layer structure.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: MlpParams,
    second_moment: MlpParams,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !params.same_structure(grads) {
        return Err(Error::shape("gradient structure does not match parameters"));
    }
    for (layer_idx, layer) in grads.layers().iter().enumerate() {
        if layer
            .weights
            .iter()
            .chain(&layer.bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::numeric(format!(
                "non-finite gradient in layer {layer_idx}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (((p_layer, g_layer), m_layer), v_layer) in params
        .layers_mut()
        .iter_mut()
        .zip(grads.layers())
        .zip(state.first_moment.layers_mut())
        .zip(state.second_moment.layers_mut())
    {
        let params_iter = p_layer.weights.iter_mut().chain(p_layer.bias.iter_mut());
        let grads_iter = g_layer.weights.iter().chain(g_layer.bias.iter());
        let m_iter = m_layer.weights.iter_mut().chain(m_layer.bias.iter_mut());
        let v_iter = v_layer.weights.iter_mut().chain(v_layer.bias.iter_mut());
        for (((p, &g), m), v) in params_iter.zip(grads_iter).zip(m_iter).zip(v_iter) {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
