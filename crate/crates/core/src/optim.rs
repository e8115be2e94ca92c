//! First-order optimizers over [`Param`] lists.

use serde::{Deserialize, Serialize};

use crate::error::{PhmError, Result};
use crate::tensor::Param;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerSpec::Sgd { lr } | OptimizerSpec::Adam { lr, .. } => lr,
        }
    }

    pub fn build(&self) -> Optimizer {
        Optimizer {
            spec: *self,
            step: 0,
            moments: Vec::new(),
        }
    }
}

/// Stateful optimizer. Moment buffers are keyed by position in the
/// parameter list, which must stay the same across steps.
#[derive(Clone, Debug)]
pub struct Optimizer {
    spec: OptimizerSpec,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter. Frozen parameters
    /// are skipped; a trainable parameter without a gradient is an error.
    pub fn step(&mut self, params: &[Param]) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if p.trainable() && p.grad().is_none() {
                return Err(PhmError::Contract(format!(
                    "trainable parameter #{i} {:?} has no gradient",
                    p.shape()
                )));
            }
        }
        self.step += 1;
        if self.moments.len() != params.len() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
                .collect();
        }
        let t = self.step as i32;
        for (p, (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            if !p.trainable() {
                continue;
            }
            match self.spec {
                OptimizerSpec::Sgd { lr } => p.update(|w, g| {
                    let g = g.expect("checked above");
                    w.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
                }),
                OptimizerSpec::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    p.update(|w, g| {
                        let g = g.expect("checked above");
                        for i in 0..w.len() {
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                            let mhat = m[i] / c1;
                            let vhat = v[i] / c2;
                            w[i] -= lr * mhat / (vhat.sqrt() + eps);
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn zero_grad(params: &[Param]) {
    params.iter().for_each(Param::zero_grad);
}

/// L2 norm over every gradient buffer present.
pub fn grad_norm(params: &[Param]) -> f64 {
    params
        .iter()
        .filter_map(Param::grad)
        .flat_map(|g| g.into_iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}
