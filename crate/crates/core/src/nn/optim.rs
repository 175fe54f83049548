use serde::{Deserialize, Serialize};

use super::{DenseMatrix, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
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

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Optimizer with per-parameter state (Adam moments).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the populated gradient buffers. A non-finite
    /// gradient aborts without touching any parameter.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some(name) = params.first_non_finite_grad() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                for id in params.ids().collect::<Vec<_>>() {
                    let g = params.grad(id).data().to_vec();
                    for (p, gi) in params.value_mut(id).data_mut().iter_mut().zip(g) {
                        *p -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if self.first.len() != params.len() {
                    self.first = params
                        .ids()
                        .map(|id| {
                            let (r, c) = params.value(id).shape();
                            DenseMatrix::zeros(r, c)
                        })
                        .collect();
                    self.second = self.first.clone();
                }
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for id in params.ids().collect::<Vec<_>>() {
                    let m = self.first[id.0].data_mut();
                    let v = self.second[id.0].data_mut();
                    let g = params.grad(id).data().to_vec();
                    let p = params.value_mut(id).data_mut();
                    for i in 0..g.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        p[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
