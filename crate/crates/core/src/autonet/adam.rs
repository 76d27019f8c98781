use serde::{Deserialize, Serialize};

use super::{DenseLayer, LayerGrads};
use crate::error::{ArlError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, name: &str) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(ArlError::shape(
            "adam_step",
            format!("{name}: {} params", params.len()),
            format!("{} grads / {} moments", grads.len(), state.m.len()),
        ));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(ArlError::Training {
            iteration: state.t + 1,
            last_good: None,
            what: format!("non-finite gradient for {name}[{i}]"),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Adam moments for a weight matrix and its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAdam {
    pub weights: AdamState,
    pub bias: AdamState,
}

impl LayerAdam {
    pub fn for_layer(layer: &DenseLayer) -> Self {
        Self {
            weights: AdamState::new(layer.weights.data().len()),
            bias: AdamState::new(layer.bias.len()),
        }
    }

    pub fn step(&mut self, layer: &mut DenseLayer, grads: &LayerGrads, lr: f64, name: &str) -> Result<()> {
        adam_step(
            layer.weights.data_mut(),
            grads.weights.data(),
            &mut self.weights,
            lr,
            &format!("{name}.weights"),
        )?;
        adam_step(&mut layer.bias, &grads.bias, &mut self.bias, lr, &format!("{name}.bias"))
    }
}
