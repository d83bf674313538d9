//! Small dense multilayer perceptrons with explicit layer-by-layer
//! reverse-mode gradients.
//!
//! The model zoo is fixed (feature-space generators, discriminators and
//! the embedding net are all MLPs), so the backward pass is written out
//! per layer instead of going through a general tape. Weights are
//! row-major `(out_dim, in_dim)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    None,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::None => z,
        }
    }

    /// Derivative given the pre-activation `z` and post-activation `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::None => 1.0,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::Relu => write!(f, "relu"),
            Activation::None => write!(f, "none"),
        }
    }
}

/// One dense layer: `a = activation(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `(out_dim, in_dim)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(Error::shape(format!(
                "layer weights len {} != {}x{}",
                weights.len(),
                out_dim,
                in_dim
            )));
        }
        if bias.len() != out_dim {
            return Err(Error::shape(format!(
                "layer bias len {} != out dim {}",
                bias.len(),
                out_dim
            )));
        }
        Ok(LayerParams {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerParams {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }
}

/// Parameters of a whole MLP. Also serves as the gradient container:
/// gradients of a network are stored in an `MlpParams` of identical
/// structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<LayerParams>,
}

impl MlpParams {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::shape(format!(
                    "layer out dim {} does not chain into next in dim {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Builds a net with the given layer widths and activations, weights
    /// drawn uniformly with Xavier scaling (He scaling for relu layers)
    /// and zero biases.
    pub fn seeded(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::config(format!(
                "need n+1 dims for n activations, got {} dims / {} activations",
                dims.len(),
                activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (k, &act) in activations.iter().enumerate() {
            let (in_dim, out_dim) = (dims[k], dims[k + 1]);
            if in_dim == 0 || out_dim == 0 {
                return Err(Error::config("layer dims must be > 0"));
            }
            let limit = match act {
                Activation::Relu => (6.0 / in_dim as f64).sqrt(),
                _ => (6.0 / (in_dim + out_dim) as f64).sqrt(),
            };
            let weights = (0..in_dim * out_dim)
                .map(|_| rng.uniform_in(-limit, limit))
                .collect();
            layers.push(LayerParams::new(
                in_dim,
                out_dim,
                act,
                weights,
                vec![0.0; out_dim],
            )?);
        }
        MlpParams::new(layers)
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Same structure with all weights and biases zeroed; the canonical
    /// gradient / moment-buffer constructor.
    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.in_dim, l.out_dim, l.activation))
                .collect(),
        }
    }

    /// True when `other` has identical layer dimensions.
    pub fn same_structure(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flat coordinate access (weights then bias, layer by layer); used
    /// by the finite-difference oracle.
    pub fn get_param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.weights.len() {
                return l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                l.weights[idx] = value;
                return;
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                l.bias[idx] = value;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// `self += scale * other`, layer by layer.
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        debug_assert!(self.same_structure(other));
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (w, g) in a.weights.iter_mut().zip(&b.weights) {
                *w += scale * g;
            }
            for (w, g) in a.bias.iter_mut().zip(&b.bias) {
                *w += scale * g;
            }
        }
    }
}

/// Activations recorded during a forward pass, for the backward pass.
struct Trace {
    /// Input to each layer: `inputs[0]` is the net input, `inputs[k]`
    /// the post-activation of layer k-1.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pres: Vec<Vec<f64>>,
    /// Post-activation of the final layer.
    output: Vec<f64>,
}

fn forward_trace(params: &MlpParams, input: &[f64]) -> Result<Trace> {
    if input.len() != params.in_dim() {
        return Err(Error::shape(format!(
            "input dim {} != first layer in dim {}",
            input.len(),
            params.in_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pres = Vec::with_capacity(params.layers.len());
    let mut current = input.to_vec();
    for layer in &params.layers {
        let mut pre = vec![0.0; layer.out_dim];
        for (o, p) in pre.iter_mut().enumerate() {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut sum = layer.bias[o];
            for (w, x) in row.iter().zip(&current) {
                sum += w * x;
            }
            *p = sum;
        }
        let post: Vec<f64> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
        inputs.push(current);
        pres.push(pre);
        current = post;
    }
    if let Some(bad) = current.iter().find(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("non-finite forward output {bad}")));
    }
    Ok(Trace {
        inputs,
        pres,
        output: current,
    })
}

/// Applies the net to a single vector.
pub fn forward_vec(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_trace(params, input)?.output)
}

/// Exact reverse-mode gradients for a single vector. `output_grad` is
/// the gradient of some scalar with respect to the net output; returns
/// that scalar's gradients with respect to parameters and to the input.
pub fn backward_vec(
    params: &MlpParams,
    input: &[f64],
    output_grad: &[f64],
) -> Result<(MlpParams, Vec<f64>)> {
    if output_grad.len() != params.out_dim() {
        return Err(Error::shape(format!(
            "output grad dim {} != net out dim {}",
            output_grad.len(),
            params.out_dim()
        )));
    }
    let trace = forward_trace(params, input)?;
    let mut grads = params.zeros_like();
    let mut d_post = output_grad.to_vec();
    for (k, layer) in params.layers.iter().enumerate().rev() {
        let pre = &trace.pres[k];
        let layer_in = &trace.inputs[k];
        let post_k: Vec<f64> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
        let g = &mut grads.layers[k];
        let mut d_in = vec![0.0; layer.in_dim];
        for o in 0..layer.out_dim {
            let dz = d_post[o] * layer.activation.derivative(pre[o], post_k[o]);
            g.bias[o] += dz;
            let row = o * layer.in_dim;
            for i in 0..layer.in_dim {
                g.weights[row + i] += dz * layer_in[i];
                d_in[i] += layer.weights[row + i] * dz;
            }
        }
        d_post = d_in;
    }
    Ok((grads, d_post))
}

/// Applies the net row-wise: any tensor whose last dimension equals the
/// first layer's input dim maps to one with that dimension replaced by
/// the output dim.
pub fn mlp_forward(params: &MlpParams, input: &Tensor) -> Result<Tensor> {
    if input.last_dim() != params.in_dim() {
        return Err(Error::shape(format!(
            "input last dim {} != first layer in dim {}",
            input.last_dim(),
            params.in_dim()
        )));
    }
    let mut out = Vec::with_capacity(input.len() / params.in_dim() * params.out_dim());
    for row in input.rows() {
        out.extend(forward_vec(params, row)?);
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = params.out_dim();
    Tensor::new(shape, out)
}

/// Row-wise reverse-mode pass. Parameter gradients are summed over rows;
/// the input gradient has the input's shape.
pub fn mlp_backward(
    params: &MlpParams,
    input: &Tensor,
    output_grad: &Tensor,
) -> Result<(MlpParams, Tensor)> {
    let mut expected_shape = input.shape().to_vec();
    if expected_shape.is_empty() {
        return Err(Error::shape("input must have at least one dimension"));
    }
    *expected_shape.last_mut().unwrap() = params.out_dim();
    if output_grad.shape() != expected_shape.as_slice() {
        return Err(Error::shape(format!(
            "output grad shape {:?} does not match forward output shape {:?}",
            output_grad.shape(),
            expected_shape
        )));
    }
    let mut param_grads = params.zeros_like();
    let mut input_grad = Vec::with_capacity(input.len());
    for (row, grad_row) in input.rows().zip(output_grad.rows()) {
        let (g, din) = backward_vec(params, row, grad_row)?;
        param_grads.add_scaled(&g, 1.0);
        input_grad.extend(din);
    }
    Ok((
        param_grads,
        Tensor::new(input.shape().to_vec(), input_grad)?,
    ))
}

/// Smallest |pre-activation| seen on relu layers over a forward pass;
/// infinite when the net has no relu layer. Gradient checks exclude
/// evaluation points that sit on a kink.
pub fn relu_kink_margin(params: &MlpParams, input: &[f64]) -> Result<f64> {
    let trace = forward_trace(params, input)?;
    let mut margin = f64::INFINITY;
    for (layer, pre) in params.layers.iter().zip(&trace.pres) {
        if layer.activation == Activation::Relu {
            for z in pre {
                margin = margin.min(z.abs());
            }
        }
    }
    Ok(margin)
}
