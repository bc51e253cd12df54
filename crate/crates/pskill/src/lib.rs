//! Goal-parameterized behavioral cloning in a 2D button-grid world.
//!
//! The crate bundles a deterministic simulator, a scripted expert for
//! demonstration collection, a from-scratch neural network core with exact
//! reverse-mode gradients, the three-module goal-conditioned policy, a
//! NovoGrad-based trainer, and a closed-loop evaluation harness.

pub mod error;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
