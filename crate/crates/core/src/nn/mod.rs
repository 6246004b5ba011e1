//! Dense networks: sine, GeLU, tanh and linear layers, row-ℓ1 Lipschitz
//! normalization with trainable bounds, reverse-mode gradients (including
//! through forward-mode input tangents) and Adam.

mod activation;
mod adam;
pub mod checkpoint;
mod layer;
mod lipschitz;
mod stack;

pub use activation::{Activation, GELU_MAX_SLOPE};
pub use adam::Adam;
pub use layer::{DenseLayer, LayerBackward, LayerCache, LayerGrad};
pub use lipschitz::{lipschitz_normalize, lipschitz_normalize_backward, max_row_l1, softplus_inverse, ROW_BOUND_SLACK};
pub use stack::{NetworkStack, StackBackward, StackCache, StackForward};

/// Default ω₀ of the actuation network's first sine layer.
pub const ACTUATION_OMEGA0: f64 = 30.0;
/// ω₀ of the mapping network's sine layers.
pub const MAPPING_OMEGA0: f64 = 5.0;

#[cfg(test)]
mod tests;
