//! Adam with bias-corrected moment estimates, one state per named tensor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// First/second-moment accumulators and step counter for one tensor.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(t: &Tensor) -> Self {
        AdamState {
            m: Tensor::zeros(t.rows, t.cols),
            v: Tensor::zeros(t.rows, t.cols),
            step: 0,
        }
    }
}

/// One in-place Adam update. Errors if the gradient contains a
/// non-finite entry, naming the offending parameter.
pub fn adam_step(
    name: &str,
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            left_rows: param.rows,
            left_cols: param.cols,
            right_rows: grad.rows,
            right_cols: grad.cols,
        });
    }
    if !grad.all_finite() {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for i in 0..param.data.len() {
        let g = grad.data[i];
        state.m.data[i] = beta1 * state.m.data[i] + (1.0 - beta1) * g;
        state.v.data[i] = beta2 * state.v.data[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m.data[i] / bc1;
        let v_hat = state.v.data[i] / bc2;
        param.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer over a named parameter collection. States are created
/// lazily on first update, so the parameter set may grow (new relation
/// embeddings, freshly covered entities) between steps.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub states: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            states: BTreeMap::new(),
        }
    }

    /// Apply one step to every parameter that has a gradient entry.
    /// Parameters without a gradient entry are left untouched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        self.step_with_lr(params, grads, self.lr)
    }

    /// Same as [`Adam::step`] but with an explicit rate, used when one
    /// loss trains at a multiple of the base rate.
    pub fn step_with_lr(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        for (name, grad) in grads {
            let param = params.get_mut(name).ok_or_else(|| {
                Error::invalid(format!("gradient for unknown parameter {name:?}"))
            })?;
            let state = self
                .states
                .entry(name.clone())
                .or_insert_with(|| AdamState::zeros_like(param));
            adam_step(
                name, param, grad, state, lr, self.beta1, self.beta2, self.eps,
            )?;
        }
        Ok(())
    }
}
