//! Adam with bias-corrected moments and loss-coupled L2 weight decay.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64, weight_decay: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: (0..params.len())
                .map(|i| {
                    let t = params.tensor(i);
                    Tensor::zeros(t.rows(), t.cols())
                })
                .collect(),
            v: (0..params.len())
                .map(|i| {
                    let t = params.tensor(i);
                    Tensor::zeros(t.rows(), t.cols())
                })
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update step; weight decay enters as an L2 term added to the
    /// gradient before the moment updates.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient slots for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for slot in 0..params.len() {
            let g = grads.tensor(slot);
            let p = params.tensor_mut(slot);
            if !g.same_shape(p) {
                return Err(Error::ShapeMismatch(format!(
                    "gradient slot {slot}: {}x{} vs parameter {}x{}",
                    g.rows(),
                    g.cols(),
                    p.rows(),
                    p.cols()
                )));
            }
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            for (i, pv) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i] + self.weight_decay * *pv;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
