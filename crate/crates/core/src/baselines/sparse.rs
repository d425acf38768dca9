use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::linalg::{independent_columns, least_squares, Matrix};
use crate::odeint::{integrate, OdeProblem, SolveConfig, ZeroOrderHold};
use crate::systems::Trajectory;
use crate::training::Window;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseConfig {
    /// Highest total degree of the monomial basis.
    pub degree: u32,
    /// Coefficients smaller than this in magnitude are zeroed.
    pub threshold: f64,
    /// Bound on threshold/refit rounds.
    pub max_rounds: usize,
}

impl Default for SparseConfig {
    fn default() -> Self {
        SparseConfig {
            degree: 3,
            threshold: 0.1,
            max_rounds: 50,
        }
    }
}

/// Linear combination of monomials in `(state, control)` per derivative
/// component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseModel {
    pub state_dim: usize,
    pub control_dim: usize,
    /// Exponent of every variable, one row per basis term.
    pub exponents: Vec<Vec<u32>>,
    /// One column of basis coefficients per state component.
    pub coefficients: Vec<Vec<f64>>,
    pub threshold: f64,
}

/// Every monomial of total degree `0..=degree` in `vars` variables: by
/// degree, then lexicographically in the variable indices.
pub fn monomials(vars: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(start: usize, left: u32, e: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(e.clone());
            return;
        }
        for i in start..e.len() {
            e[i] += 1;
            rec(i, left - 1, e, out);
            e[i] -= 1;
        }
    }
    let mut out = Vec::new();
    let mut e = vec![0u32; vars];
    for d in 0..=degree {
        rec(0, d, &mut e, &mut out);
    }
    out
}

fn features(exponents: &[Vec<u32>], z: &[f64]) -> Vec<f64> {
    exponents
        .iter()
        .map(|e| e.iter().zip(z).fold(1.0, |acc, (&p, &v)| acc * powi(v, p)))
        .collect()
}

fn powi(v: f64, p: u32) -> f64 {
    (0..p).fold(1.0, |acc, _| acc * v)
}

/// Derivative estimates at every sample: central differences inside,
/// one-sided at both ends (second order through three samples when
/// available).
pub fn finite_differences(times: &[f64], states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BaselineError> {
    let t = times.len();
    if t < 2 {
        return Err(BaselineError::TooShort);
    }
    let central = |a: usize, b: usize| -> Vec<f64> {
        let dt = times[b] - times[a];
        states[b].iter().zip(&states[a]).map(|(x, y)| (x - y) / dt).collect()
    };
    // derivative at sample e of the quadratic through samples e, p, q
    let one_sided = |e: usize, p: usize, q: usize| -> Vec<f64> {
        let (h1, h2) = (times[p] - times[e], times[q] - times[e]);
        let (c0, c1, c2) = (-(h1 + h2) / (h1 * h2), h2 / (h1 * (h2 - h1)), -h1 / (h2 * (h2 - h1)));
        (0..states[e].len())
            .map(|i| c0 * states[e][i] + c1 * states[p][i] + c2 * states[q][i])
            .collect()
    };
    Ok((0..t)
        .map(|k| match k {
            0 if t == 2 => central(0, 1),
            k if t == 2 => central(k - 1, k),
            0 => one_sided(0, 1, 2),
            k if k == t - 1 => one_sided(k, k - 1, k - 2),
            k => central(k - 1, k + 1),
        })
        .collect())
}

/// Sequentially thresholded least squares on pooled samples of `trajs`.
pub fn sparse_fit(trajs: &[Trajectory], cfg: &SparseConfig) -> Result<SparseModel, BaselineError> {
    if !(cfg.threshold >= 0.0) {
        return Err(BaselineError::Config("threshold must be >= 0"));
    }
    let first = trajs.first().ok_or(BaselineError::TooShort)?;
    let n = first.states[0].len();
    let m = first.controls.first().map_or(0, |c| c.len());
    let exponents = monomials(n + m, cfg.degree);
    let mut rows = Vec::new();
    let mut targets: Vec<Vec<f64>> = vec![Vec::new(); n];
    for tr in trajs {
        let derivs = finite_differences(&tr.times, &tr.states)?;
        for (k, (x, dx)) in tr.states.iter().zip(&derivs).enumerate() {
            if x.len() != n {
                return Err(BaselineError::Length {
                    what: "state",
                    expected: n,
                    got: x.len(),
                });
            }
            let mut z = x.clone();
            if m > 0 {
                z.extend_from_slice(&tr.controls[k]);
            }
            rows.push(features(&exponents, &z));
            for (col, v) in targets.iter_mut().zip(dx) {
                col.push(*v);
            }
        }
    }
    if rows.len() < exponents.len() {
        return Err(BaselineError::TooFewSamples {
            samples: rows.len(),
            basis: exponents.len(),
        });
    }
    let theta = Matrix::from_rows(&rows);
    // terms that are exact combinations of earlier ones (u^2 under bang-bang
    // controls, say) stay at zero
    let basis = independent_columns(&theta, 1e-9);
    if basis.is_empty() {
        return Err(BaselineError::RankDeficient { term: 0 });
    }
    let mut usable = vec![false; exponents.len()];
    basis.iter().for_each(|&i| usable[i] = true);
    let full = least_squares(&theta.select_columns(&basis), &targets)?;
    let mut coefficients: Vec<Vec<f64>> = full
        .iter()
        .map(|fit| {
            let mut c = vec![0.0; exponents.len()];
            for (&i, v) in basis.iter().zip(fit) {
                c[i] = *v;
            }
            c
        })
        .collect();
    let mut support: Vec<Vec<bool>> = vec![usable.clone(); n];
    for _ in 0..cfg.max_rounds {
        let mut changed = false;
        for (j, coef) in coefficients.iter_mut().enumerate() {
            let active: Vec<bool> = coef.iter().zip(&usable).map(|(c, u)| *u && c.abs() >= cfg.threshold).collect();
            if active == support[j] {
                continue;
            }
            changed = true;
            let cols: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
            coef.iter_mut().for_each(|c| *c = 0.0);
            if !cols.is_empty() {
                let fit = least_squares(&theta.select_columns(&cols), &targets[j..j + 1])?;
                for (&i, v) in cols.iter().zip(&fit[0]) {
                    coef[i] = *v;
                }
            }
            support[j] = active;
        }
        if !changed {
            break;
        }
    }
    Ok(SparseModel {
        state_dim: n,
        control_dim: m,
        exponents,
        coefficients,
        threshold: cfg.threshold,
    })
}

impl SparseModel {
    pub fn basis_len(&self) -> usize {
        self.exponents.len()
    }

    /// Indices of the nonzero terms of component `j`.
    pub fn support(&self, j: usize) -> Vec<usize> {
        (0..self.basis_len()).filter(|&i| self.coefficients[j][i] != 0.0).collect()
    }

    /// Human-readable monomial, e.g. `x*z` or `y^2`.
    pub fn term_name(&self, i: usize, names: &[&str]) -> String {
        let parts: Vec<String> = self.exponents[i]
            .iter()
            .zip(names)
            .filter(|(e, _)| **e > 0)
            .map(|(e, n)| if *e == 1 { String::from(*n) } else { format!("{n}^{e}") })
            .collect();
        if parts.is_empty() {
            String::from("1")
        } else {
            parts.join("*")
        }
    }

    /// Applies thresholding once without refitting.
    pub fn thresholded(&self) -> SparseModel {
        let mut out = self.clone();
        for c in out.coefficients.iter_mut().flatten() {
            if c.abs() < self.threshold {
                *c = 0.0;
            }
        }
        out
    }

    pub fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let mut z = x.to_vec();
        z.extend_from_slice(u);
        let f = features(&self.exponents, &z);
        for (d, c) in dx.iter_mut().zip(&self.coefficients) {
            *d = c.iter().zip(&f).map(|(a, b)| a * b).sum();
        }
    }

    /// RK4 rollout of the identified model from the last observed state.
    pub fn predict(&self, window: &Window, max_substep: f64) -> Result<Vec<Vec<f64>>, BaselineError> {
        let x0 = window.last_observed();
        if x0.len() != self.state_dim {
            return Err(BaselineError::Length {
                what: "state",
                expected: self.state_dim,
                got: x0.len(),
            });
        }
        if let Some(u) = window.controls.first().filter(|u| u.len() != self.control_dim) {
            return Err(BaselineError::Length {
                what: "control",
                expected: self.control_dim,
                got: u.len(),
            });
        }
        if self.control_dim > 0 && window.controls.len() < window.times.len() {
            return Err(BaselineError::Length {
                what: "window controls",
                expected: window.times.len(),
                got: window.controls.len(),
            });
        }
        let h = window.history;
        let control = if self.control_dim == 0 {
            ZeroOrderHold::none()
        } else {
            ZeroOrderHold::new(&window.times[h - 1..], &window.controls[h - 1..window.times.len()])
        };
        let mut ode = OdeProblem {
            rhs: |x: &[f64], u: &[f64], _t: f64, dx: &mut [f64]| self.rhs(x, u, dx),
            x0: x0.to_vec(),
            t0: window.times[h - 1],
            control,
        };
        let cfg = SolveConfig::Rk4 {
            substeps: crate::odeint::Substeps::MaxStep(max_substep),
        };
        Ok(integrate(&mut ode, &window.times[h..], &cfg)?)
    }
}
