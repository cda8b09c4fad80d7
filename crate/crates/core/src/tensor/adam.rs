use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Rescale the whole gradient when its L2 norm exceeds this value.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            max_grad_norm: None,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-2)
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        AdamState { m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0, config }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(state: &mut AdamState, param: &mut Tensor, grad: &Tensor) -> Result<()> {
    if param.shape() != grad.shape() || state.m.shape() != param.shape() {
        return Err(Error::Shape(format!(
            "adam: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    let AdamConfig { learning_rate, beta1, beta2, epsilon, .. } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (((p, g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// Adam over every trainable parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    states: Vec<AdamState>,
    steps: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let states = store.iter().map(|(_, p)| AdamState::new(p.value.shape(), config)).collect();
        Adam { config, states, steps: 0 }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() || self.states.len() != store.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} gradients, {} states",
                store.len(),
                grads.len(),
                self.states.len()
            )));
        }
        let clip = match self.config.max_grad_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if !norm.is_finite() {
                    return Err(Error::NumericDomain(format!("gradient norm {norm}")));
                }
                (norm > max).then(|| max / norm)
            }
            None => None,
        };
        let mut scaled;
        for (id, grad) in grads.iter() {
            let param = store.get_mut(id);
            if !param.trainable {
                continue;
            }
            let g = match clip {
                Some(c) => {
                    scaled = grad.clone();
                    scaled.data_mut().iter_mut().for_each(|v| *v *= c);
                    &scaled
                }
                None => grad,
            };
            adam_step(&mut self.states[id.index()], &mut param.value, g)?;
        }
        self.steps += 1;
        Ok(())
    }
}
