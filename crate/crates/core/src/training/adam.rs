use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum AdamError {
    #[error("gradient has length {got}, parameters have {expected}")]
    Length { expected: usize, got: usize },
    #[error("non-finite gradient component {index}; step rejected")]
    NonFinite { index: usize },
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates `params` in place. A rejected step leaves parameters and
    /// moment estimates untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), AdamError> {
        if grad.len() != params.len() || grad.len() != self.m.len() {
            return Err(AdamError::Length {
                expected: params.len(),
                got: grad.len(),
            });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(AdamError::NonFinite { index });
        }
        self.t += 1;
        let c1 = 1.0 - crate::math::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - crate::math::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (crate::math::sqrt(vh) + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut a = Adam::new(3, 3e-3);
        let mut p = vec![1.0, -2.0, 0.5];
        a.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut a = Adam::new(1, 3e-3);
        let mut p = vec![0.0];
        a.step(&mut p, &[1.0]).unwrap();
        // m_hat = 1, v_hat = 1, step = lr / (1 + eps)
        let expected = -3e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn equal_gradients_move_identically() {
        let mut a = Adam::new(2, 3e-3);
        let mut p = vec![0.3, 0.3];
        for k in 0..10 {
            let g = 0.1 * k as f64 - 0.4;
            a.step(&mut p, &[g, g]).unwrap();
        }
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut a = Adam::new(2, 3e-3);
        let mut p = vec![1.0, 1.0];
        assert_eq!(a.step(&mut p, &[0.1, f64::NAN]), Err(AdamError::NonFinite { index: 1 }));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(a.steps(), 0);
        assert!(a.step(&mut p, &[0.1]).is_err());
    }
}
