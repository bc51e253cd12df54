//! Minimal tensor and differentiable-layer core.
//!
//! Everything is 32-bit floats with deterministic, fixed-order accumulation;
//! the finite-difference oracle in [`gradcheck`] is the only place double
//! precision appears.

pub mod gradcheck;
pub mod layers;
pub mod reference;
mod tensor;

pub use gradcheck::{grad_check, DiffUnit, GradCheckReport};
pub use layers::{relu, relu_backward, spatial_softmax, spatial_softmax_backward, Conv2d, Linear};
pub use tensor::Tensor;
