//! AdamW with decoupled weight decay.


use crate::encoder::ModelParams;
// In std builds the inherent f64 methods shadow this trait.
#[allow(unused_imports)]
use num_traits::Float;
use crate::error::{Error, Result};

/// Optimizer state: first and second moment estimates shaped like the
/// parameters, plus the step counter for bias correction.
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: usize,
    m: ModelParams,
    v: ModelParams,
}

impl AdamW {
    pub fn new(
        params: &ModelParams,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        weight_decay: f64,
    ) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update: moment estimates with bias correction, plus decoupled
    /// weight decay on everything except biases and layer-norm parameters.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let metas = params.tensor_metas();
        let mut tensors = params.tensors_mut();
        let grad_tensors = grads.tensors();
        let mut m_tensors = self.m.tensors_mut();
        let mut v_tensors = self.v.tensors_mut();

        for (idx, (name, decay)) in metas.iter().enumerate() {
            let grad = grad_tensors[idx];
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { what: alloc::format!("gradient of {name}") });
            }
            let tensor = &mut tensors[idx];
            let m = &mut m_tensors[idx];
            let v = &mut v_tensors[idx];
            let decay_factor = if *decay { 1.0 - self.learning_rate * self.weight_decay } else { 1.0 };
            for i in 0..tensor.len() {
                let g = grad[i];
                tensor[i] *= decay_factor;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                tensor[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
