use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::systems::Trajectory;

/// Frozen affine input scaling and the output scale of residual
/// derivatives, computed once from training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub state_mean: Vec<f64>,
    pub state_scale: Vec<f64>,
    pub control_mean: Vec<f64>,
    pub control_scale: Vec<f64>,
    /// Spread of finite-difference derivatives per state component.
    pub deriv_scale: Vec<f64>,
}

struct Moments {
    sum: Vec<f64>,
    sq: Vec<f64>,
    count: usize,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments {
            sum: vec![0.0; n],
            sq: vec![0.0; n],
            count: 0,
        }
    }

    fn push(&mut self, v: impl Iterator<Item = f64>) {
        for ((s, q), x) in self.sum.iter_mut().zip(&mut self.sq).zip(v) {
            *s += x;
            *q += x * x;
        }
        self.count += 1;
    }

    fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.count.max(1) as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / c).collect();
        let scale = self
            .sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / c - m * m).max(0.0);
                let sd = crate::math::sqrt(var);
                if sd > 1e-12 * m.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        (mean, scale)
    }
}

impl Standardization {
    pub fn identity(state_dim: usize, control_dim: usize) -> Self {
        Standardization {
            state_mean: vec![0.0; state_dim],
            state_scale: vec![1.0; state_dim],
            control_mean: vec![0.0; control_dim],
            control_scale: vec![1.0; control_dim],
            deriv_scale: vec![1.0; state_dim],
        }
    }

    /// Statistics over every sample of `trajs`. Degenerate components get
    /// unit scale.
    pub fn fit(trajs: &[Trajectory]) -> Self {
        let first = &trajs[0];
        let n = first.states[0].len();
        let m = first.controls.first().map_or(0, |c| c.len());
        let (mut xs, mut us, mut ds) = (Moments::new(n), Moments::new(m), Moments::new(n));
        for tr in trajs {
            for (x, u) in tr.states.iter().zip(&tr.controls) {
                xs.push(x.iter().copied());
                us.push(u.iter().copied());
            }
            for k in 1..tr.len() {
                let dt = tr.times[k] - tr.times[k - 1];
                let (a, b) = (&tr.states[k - 1], &tr.states[k]);
                ds.push(a.iter().zip(b).map(|(p, q)| (q - p) / dt));
            }
        }
        let (state_mean, state_scale) = xs.finish();
        let (control_mean, control_scale) = us.finish();
        let (_, deriv_scale) = ds.finish();
        Standardization {
            state_mean,
            state_scale,
            control_mean,
            control_scale,
            deriv_scale,
        }
    }

    pub fn check(&self, state_dim: usize, control_dim: usize) -> Result<(), ModelError> {
        let ok = self.state_mean.len() == state_dim
            && self.state_scale.len() == state_dim
            && self.deriv_scale.len() == state_dim
            && self.control_mean.len() == control_dim
            && self.control_scale.len() == control_dim;
        let positive = self
            .state_scale
            .iter()
            .chain(&self.control_scale)
            .chain(&self.deriv_scale)
            .all(|s| *s > 0.0 && s.is_finite());
        if ok && positive {
            Ok(())
        } else {
            Err(ModelError::Config("standardization does not match the system dimensions"))
        }
    }

    pub fn state<'a>(&'a self, x: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        x.iter()
            .zip(self.state_mean.iter().zip(&self.state_scale))
            .map(|(v, (m, s))| (v - m) / s)
    }

    pub fn control<'a>(&'a self, u: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        u.iter()
            .zip(self.control_mean.iter().zip(&self.control_scale))
            .map(|(v, (m, s))| (v - m) / s)
    }
}
