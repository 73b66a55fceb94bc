//! Adam optimizer.

use crate::error::{Error, Result};

/// Adam state over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Default hyperparameters: lr 1e-3, betas (0.9, 0.999), eps 1e-8.
    pub fn new(param_len: usize, lr: f64) -> Self {
        AdamState {
            first: vec![0.0; param_len],
            second: vec![0.0; param_len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One in-place update of `params` from `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        Error::check_dim(self.first.len(), params.len())?;
        Error::check_dim(self.first.len(), grads.len())?;
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * grads[i];
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.first[i] / bc1;
            let v_hat = self.second[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::new(3, 0.1);
        let mut params = vec![1.0, -2.0, 0.5];
        let orig = params.clone();
        for _ in 0..5 {
            adam.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        }
        assert_eq!(params, orig);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut adam = AdamState::new(2, 0.01);
        let mut params = vec![0.0, 0.0];
        for _ in 0..100 {
            adam.step(&mut params, &[1.0, -2.5]).unwrap();
        }
        assert!(params[0] < 0.0);
        assert!(params[1] > 0.0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // minimize ||x||^2 / 2, gradient x
        let mut adam = AdamState::new(4, 1e-2);
        let mut x = vec![2.0, -1.5, 0.7, 3.0];
        for _ in 0..2000 {
            let grad = x.clone();
            adam.step(&mut x, &grad).unwrap();
        }
        let norm = crate::linalg::norm(&x);
        assert!(norm <= 1e-3, "norm {norm}");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut adam = AdamState::new(2, 0.1);
        let mut params = vec![0.0, 0.0];
        assert!(adam.step(&mut params, &[1.0]).is_err());
    }
}
