//! AdamW with bias-corrected moments and decoupled weight decay.

use ndarray::{Array2, Zip};

use crate::error::{GateError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl AdamWState {
    pub fn new(shapes: &[(usize, usize)], lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            second: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    /// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(GateError::Shape(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != self.first[i].dim() || g.dim() != self.first[i].dim() {
                return Err(GateError::Shape(format!(
                    "parameter {i}: {:?} / grad {:?} vs state {:?}",
                    p.dim(),
                    g.dim(),
                    self.first[i].dim()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.lr, self.weight_decay);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            Zip::from(&mut **p)
                .and(g)
                .and(&mut self.first[i])
                .and(&mut self.second[i])
                .for_each(|theta, &gi, m, v| {
                    *m = b1 * *m + (1.0 - b1) * gi;
                    *v = b2 * *v + (1.0 - b2) * gi * gi;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *theta);
                });
        }
        Ok(())
    }
}

/// Functional form of [`AdamWState::step`].
pub fn adamw_step(params: &mut [&mut Array2<f64>], grads: &[Array2<f64>], state: &mut AdamWState) -> Result<()> {
    state.step(params, grads)
}
