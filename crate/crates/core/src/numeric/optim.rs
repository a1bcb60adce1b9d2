use serde::{Deserialize, Serialize};

use super::layers::Module;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// RMSprop hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            lr: 5e-4,
            decay: 0.99,
            eps: 1e-5,
        }
    }
}

/// Squared-gradient accumulators, one per parameter block in visit order.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: RmsPropConfig,
    acc: Vec<Tensor>,
}

/// In-place RMSprop update of one block.
///
/// `acc ← decay·acc + (1 − decay)·g²`, `θ ← θ − lr·g / √(acc + eps)`.
pub fn rmsprop_update(params: &mut [f64], grads: &[f64], acc: &mut [f64], config: &RmsPropConfig) {
    for ((p, g), a) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
        *a = config.decay * *a + (1.0 - config.decay) * g * g;
        if *g != 0.0 {
            *p -= config.lr * g / (*a + config.eps).sqrt();
        }
    }
}

impl OptimizerState {
    pub fn new(config: RmsPropConfig) -> Self {
        OptimizerState {
            config,
            acc: Vec::new(),
        }
    }

    pub fn accumulators(&self) -> &[Tensor] {
        &self.acc
    }

    /// Apply one update to every parameter of `module` from its gradients.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) -> Result<()> {
        let mut bad = None;
        module.visit_params(&mut |p| {
            if bad.is_none() {
                if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
                    bad = Some(format!("gradient of `{}` element {i} is {}", p.name, p.grad.data()[i]));
                }
            }
        });
        if let Some(msg) = bad {
            return Err(Error::Numeric(msg));
        }
        if self.acc.is_empty() {
            module.visit_params(&mut |p| self.acc.push(Tensor::zeros(p.value.shape().to_vec())));
        }
        let config = self.config;
        let mut idx = 0;
        let acc = &mut self.acc;
        let mut mismatch = false;
        module.visit_params_mut(&mut |p| {
            match acc.get_mut(idx) {
                Some(a) if a.len() == p.value.len() => {
                    rmsprop_update(p.value.data_mut(), p.grad.data(), a.data_mut(), &config)
                }
                _ => mismatch = true,
            }
            idx += 1;
        });
        if mismatch || idx != self.acc.len() {
            return Err(Error::Dimension("optimizer state does not match module".into()));
        }
        Ok(())
    }
}
