//! Differentiable quasistatic soft-body simulation driven by actuation
//! tensors: shape-targeting Projective Dynamics, barrier contact with CCD,
//! adjoint sensitivities, canonical-space actuation warping and an
//! expression/style-conditioned actuation network.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation_model;
pub mod canonical;
pub mod contact;
pub mod datagen;
pub mod diffsim;
pub mod error;
pub mod geom;
pub mod linalg;
pub mod math;
pub mod nn;
pub mod pd;
pub mod scenes;

pub use error::{Error, Result};
