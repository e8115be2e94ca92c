//! Recurrent and attention models whose linear maps are PHM layers.

pub mod lstm;
pub mod transformer;

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::{Param, Tensor};

pub use lstm::{OutputGate, PhmLstmCell};
pub use transformer::{
    argmax, sinusoidal_positions, ModelManifest, BOS, EOS, PAD,
    CrossAttention, DecoderLayer, EncoderLayer, ModelConfig, PhmAttention, PhmFfn,
    PhmTransformer,
};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine layer normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[width], 1.0)),
            beta: Param::new(Tensor::zeros(&[width])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }

    pub fn parameters(&self) -> Vec<Param> {
        vec![self.gamma.clone(), self.beta.clone()]
    }
}

/// Inverted dropout; identity when `rng` is `None` or `rate` is zero.
pub(crate) fn dropout(g: &mut Graph, x: Var, rate: f64, rng: &mut Option<&mut crate::Rng>) -> Result<Var> {
    let Some(rng) = rng.as_deref_mut() else {
        return Ok(x);
    };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = g.shape(x).to_vec();
    let numel = g.value(x).numel();
    let mask = (0..numel)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mask = g.constant(Tensor::new(shape, mask)?);
    g.mul(x, mask)
}
