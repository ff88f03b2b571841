//! Adam with bias correction.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Result, VdpError};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.leaves().iter().map(|l| Tensor::zeros(l.value.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, leaf: usize) -> &Tensor {
        &self.m[leaf]
    }

    pub fn second_moment(&self, leaf: usize) -> &Tensor {
        &self.v[leaf]
    }
}

/// Applies one Adam update from the gradients stored in `store`.
///
/// Non-finite gradients abort the step before any parameter is touched.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if let Some(bad) = store.leaves().iter().find(|l| !l.grad.all_finite()) {
        return Err(VdpError::NonFiniteGradient { leaf: bad.name.clone() });
    }
    if state.m.len() != store.len() {
        return Err(VdpError::Dimension {
            op: "adam_step",
            axis: "leaves",
            expected: state.m.len(),
            got: store.len(),
        });
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (k, leaf) in store.leaves_mut().iter_mut().enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (((p, &g), mi), vi) in leaf
            .value
            .data_mut()
            .iter_mut()
            .zip(leaf.grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
