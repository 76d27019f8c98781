use serde::{Deserialize, Serialize};

use crate::error::{ArlError, Result};
use crate::numcore::{dropout_mask, relu, relu_grad, rng_uniform, sigmoid, Matrix, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
}

impl Activation {
    fn apply(self, pre: &Matrix) -> Matrix {
        match self {
            Activation::Relu => relu(pre),
            Activation::Linear => pre.clone(),
            Activation::Sigmoid => sigmoid(pre),
        }
    }
}

/// Fully connected layer `y = act(x W^T + b)` with `W` stored `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Everything the backward pass needs from one forward call.
#[derive(Clone, Debug)]
pub struct LayerCache {
    pub input: Matrix,
    pub pre_activation: Matrix,
    /// Post-activation output before the dropout mask.
    pub activated: Matrix,
    pub mask: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    pub fn add_assign(&mut self, other: &LayerGrads) -> Result<()> {
        self.weights.add_assign(&other.weights)?;
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

impl DenseLayer {
    /// Glorot-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut RngState) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(ArlError::Config(format!("layer must have positive width, got {inputs}->{outputs}")));
        }
        let limit = glorot_limit(inputs, outputs);
        Ok(Self {
            weights: rng_uniform(rng, outputs, inputs, -limit, limit)?,
            bias: vec![0.0; outputs],
            activation,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }

    fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(ArlError::shape(
                "dense_forward",
                x.shape_str(),
                format!("layer {}x{}", self.outputs(), self.inputs()),
            ));
        }
        x.matmul_transb(&self.weights)?.add_row_vector(&self.bias)
    }

    /// Forward pass without cache or dropout.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.activation.apply(&self.pre_activation(x)?))
    }

    /// Forward pass, multiplying the activated output by `mask` when given.
    pub fn forward(&self, x: &Matrix, mask: Option<Matrix>) -> Result<(Matrix, LayerCache)> {
        let pre = self.pre_activation(x)?;
        let activated = self.activation.apply(&pre);
        let y = match &mask {
            Some(m) => activated.hadamard(m)?,
            None => activated.clone(),
        };
        Ok((
            y,
            LayerCache {
                input: x.clone(),
                pre_activation: pre,
                activated,
                mask,
            },
        ))
    }

    /// Reverse-mode gradients of [`DenseLayer::forward`] for cotangent `dy`.
    pub fn backward(&self, cache: &LayerCache, dy: &Matrix) -> Result<(Matrix, LayerGrads)> {
        self.check_cache(cache, dy)?;
        let (dpre, grads) = self.param_grads(cache, dy)?;
        let dx = crate::numcore::matmul(&dpre, &self.weights)?;
        Ok((dx, grads))
    }

    /// Parameter gradients only, for a layer whose input needs no cotangent.
    pub fn backward_params(&self, cache: &LayerCache, dy: &Matrix) -> Result<LayerGrads> {
        self.check_cache(cache, dy)?;
        Ok(self.param_grads(cache, dy)?.1)
    }

    fn check_cache(&self, cache: &LayerCache, dy: &Matrix) -> Result<()> {
        if dy.shape() != cache.pre_activation.shape() {
            return Err(ArlError::shape("dense_backward", dy.shape_str(), cache.pre_activation.shape_str()));
        }
        if cache.input.cols() != self.inputs() || cache.pre_activation.cols() != self.outputs() {
            return Err(ArlError::Usage(format!(
                "cache for a {}->{} layer used with a {}->{} layer",
                cache.input.cols(),
                cache.pre_activation.cols(),
                self.inputs(),
                self.outputs()
            )));
        }
        Ok(())
    }

    fn param_grads(&self, cache: &LayerCache, dy: &Matrix) -> Result<(Matrix, LayerGrads)> {
        let dy = match &cache.mask {
            Some(m) => dy.hadamard(m)?,
            None => dy.clone(),
        };
        let dpre = match self.activation {
            Activation::Linear => dy,
            Activation::Relu => dy.hadamard(&relu_grad(&cache.pre_activation))?,
            Activation::Sigmoid => dy.hadamard(&cache.activated.map(|s| s * (1.0 - s)))?,
        };
        let dw = dpre.matmul_transa(&cache.input)?;
        let db = dpre.column_sums();
        Ok((dpre, LayerGrads { weights: dw, bias: db }))
    }
}

pub fn glorot_limit(inputs: usize, outputs: usize) -> f64 {
    (6.0 / (inputs + outputs) as f64).sqrt()
}

/// Forward pass that samples an inverted-dropout mask from `rng` when
/// `train_mode` is set and `dropout_rate > 0`.
pub fn dense_forward(
    layer: &DenseLayer,
    x: &Matrix,
    train_mode: bool,
    dropout_rate: f64,
    rng: &mut RngState,
) -> Result<(Matrix, LayerCache)> {
    let mask = if train_mode && dropout_rate > 0.0 {
        Some(dropout_mask(rng, x.rows(), layer.outputs(), dropout_rate)?)
    } else {
        None
    };
    layer.forward(x, mask)
}

pub fn dense_backward(layer: &DenseLayer, cache: &LayerCache, dy: &Matrix) -> Result<(Matrix, LayerGrads)> {
    layer.backward(cache, dy)
}
