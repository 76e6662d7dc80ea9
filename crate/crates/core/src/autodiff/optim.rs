use serde::{Deserialize, Serialize};

use crate::autodiff::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-step multiplicative learning-rate decay; step `t` uses `lr · decay^(t-1)`.
    pub decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 1.0,
        }
    }
}

/// First/second moment estimates for one parameter store.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    first: ParameterStore,
    second: ParameterStore,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &ParameterStore) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    /// Applies one update (Adam with bias correction, or plain SGD).
    ///
    /// Fails with a solver error once any parameter is non-finite.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &ParameterStore) -> Result<()> {
        if grads.len() != params.len()
            || params
                .tensors()
                .iter()
                .zip(grads.tensors())
                .any(|(p, g)| p.shape() != g.shape())
        {
            return Err(Error::Dimension(
                "gradients do not match parameter shapes".into(),
            ));
        }
        self.step += 1;
        let mut c = self.config;
        c.lr *= c.decay.powf((self.step - 1) as f64);
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().iter_mut().zip(grads.tensors()) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= c.lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                let moments = self
                    .first
                    .tensors_mut()
                    .iter_mut()
                    .zip(self.second.tensors_mut().iter_mut());
                for ((p, g), (m, v)) in params
                    .tensors_mut()
                    .iter_mut()
                    .zip(grads.tensors())
                    .zip(moments)
                {
                    let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
                    for i in 0..p.len() {
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        p[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
                    }
                }
            }
        }
        if params.tensors().iter().any(|p| !p.is_finite()) {
            return Err(Error::Solver(format!(
                "parameters became non-finite at optimizer step {}; lower the learning rate",
                self.step
            )));
        }
        Ok(())
    }
}

/// Functional form of a single Adam (or SGD) update.
pub fn adam_step(
    params: &mut ParameterStore,
    grads: &ParameterStore,
    state: &mut OptimizerState,
) -> Result<()> {
    state.step(params, grads)
}
