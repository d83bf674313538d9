//! Numerical substrate: tensors, MLPs with exact reverse-mode
//! gradients, the Adam optimizer, a pinned deterministic RNG, and the
//! finite-difference oracle.

pub mod adam;
pub mod fd;
pub mod mlp;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use fd::{finite_diff_grad, max_relative_error};
pub use mlp::{
    backward_vec, forward_vec, mlp_backward, mlp_forward, relu_kink_margin, Activation,
    LayerParams, MlpParams,
};
pub use rng::{derive_seed, Rng};
pub use tensor::{euclidean, Tensor};
