//! Deterministic numeric substrate: dense row-major matrices, elementwise
//! activations and a seeded PRNG.

mod matrix;
mod rng;

pub use matrix::{matmul, relu, relu_grad, sigmoid, Matrix};
pub use rng::{derive_seed, dropout_mask, rng_uniform, RngState};
