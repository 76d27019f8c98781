//! Dense-network machinery: layers with explicit backward passes, Adam, and
//! a central-difference gradient checker.

mod adam;
mod gradcheck;
mod layer;

pub use adam::{adam_step, AdamState, LayerAdam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use layer::{dense_backward, dense_forward, glorot_limit, Activation, DenseLayer, LayerCache, LayerGrads};
