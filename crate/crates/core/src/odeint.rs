//! Fixed-step RK4 (plain and taped) and adaptive Dormand–Prince 5(4).
//!
//! Controls are zero-order held: on `[t_i, t_{i+1})` the control equals the
//! sample at `t_i`. Integration is split at every control sample so the
//! right-hand side is smooth on each piece.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};

/// Default RK4 substep for training and prediction (8 per 0.5 s).
pub const TRAINING_MAX_SUBSTEP: f64 = 0.0625;
/// Tolerance used for ground-truth data generation.
pub const GENERATION_TOL: f64 = 1e-9;
/// Adaptive steps below this are treated as stiffness.
pub const MIN_ADAPTIVE_STEP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("adaptive step fell below {MIN_ADAPTIVE_STEP} s at t = {t} (stiff problem?)")]
    StepUnderflow { t: f64 },
    #[error("solution diverged (non-finite state) at t = {t}")]
    Divergence { t: f64 },
    #[error("output times must be strictly increasing and start at or after t0")]
    InvalidTimes,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substeps {
    /// Same count for every output interval.
    Fixed(u32),
    /// `ceil(interval / max_step)` substeps per interval.
    MaxStep(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum SolveConfig {
    Rk4 { substeps: Substeps },
    Dopri5 { rtol: f64, atol: f64 },
}

impl SolveConfig {
    pub fn training() -> Self {
        SolveConfig::Rk4 {
            substeps: Substeps::MaxStep(TRAINING_MAX_SUBSTEP),
        }
    }

    pub fn generation() -> Self {
        SolveConfig::Dopri5 {
            rtol: GENERATION_TOL,
            atol: GENERATION_TOL,
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        match *self {
            SolveConfig::Rk4 {
                substeps: Substeps::Fixed(0),
            } => Err(OdeError::InvalidConfig("substeps must be >= 1")),
            SolveConfig::Rk4 {
                substeps: Substeps::MaxStep(h),
            } if !(h > 0.0 && h.is_finite()) => Err(OdeError::InvalidConfig("max substep must be > 0")),
            SolveConfig::Dopri5 { rtol, atol } if !(rtol > 0.0 && atol > 0.0) => {
                Err(OdeError::InvalidConfig("rtol and atol must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

impl Substeps {
    pub fn count(&self, interval: f64) -> usize {
        match *self {
            Substeps::Fixed(n) => n as usize,
            Substeps::MaxStep(h) => {
                // guard against 0.5 / 0.0625 landing a hair above 8
                let n = crate::math::ceil(interval / h - 1e-9);
                (n as usize).max(1)
            }
        }
    }
}

/// Piecewise-constant control signal over sample times.
#[derive(Clone, Copy, Debug)]
pub struct ZeroOrderHold<'a> {
    times: &'a [f64],
    values: &'a [Vec<f64>],
}

const NO_CONTROL: &[f64] = &[];

impl<'a> ZeroOrderHold<'a> {
    pub fn new(times: &'a [f64], values: &'a [Vec<f64>]) -> Self {
        assert_eq!(times.len(), values.len(), "one control sample per time");
        ZeroOrderHold { times, values }
    }

    pub fn none() -> Self {
        ZeroOrderHold {
            times: &[],
            values: &[],
        }
    }

    /// Control active at time `t`; before the first sample the first value
    /// is used.
    pub fn at(&self, t: f64) -> &'a [f64] {
        if self.values.is_empty() {
            return NO_CONTROL;
        }
        let idx = self.times.partition_point(|&s| s <= t);
        &self.values[idx.saturating_sub(1)]
    }

    fn breakpoints_in(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + 'a {
        self.times.iter().copied().filter(move |&s| s > a && s < b)
    }

    fn pieces(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut lo = a;
        for bp in self.breakpoints_in(a, b) {
            out.push((lo, bp));
            lo = bp;
        }
        out.push((lo, b));
        out
    }
}

/// Initial-value problem `x' = rhs(x, u(t), t)`, `x(t0) = x0`.
pub struct OdeProblem<'a, F> {
    pub rhs: F,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub control: ZeroOrderHold<'a>,
}

fn check_times(t0: f64, times: &[f64]) -> Result<(), OdeError> {
    if times.is_empty() || times[0] < t0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(OdeError::InvalidTimes);
    }
    Ok(())
}

fn axpy(out: &mut [f64], x: &[f64], a: f64, y: &[f64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

/// One classical RK4 step of length `h` with the control held fixed.
pub fn rk4_step<F>(rhs: &mut F, x: &[f64], u: &[f64], t: f64, h: f64) -> Result<Vec<f64>, OdeError>
where
    F: FnMut(&[f64], &[f64], f64, &mut [f64]),
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    rhs(x, u, t, &mut k1);
    axpy(&mut tmp, x, 0.5 * h, &k1);
    rhs(&tmp, u, t + 0.5 * h, &mut k2);
    axpy(&mut tmp, x, 0.5 * h, &k2);
    rhs(&tmp, u, t + 0.5 * h, &mut k3);
    axpy(&mut tmp, x, h, &k3);
    rhs(&tmp, u, t + h, &mut k4);
    let out: Vec<f64> = (0..n)
        .map(|i| x[i] + (h / 6.0) * (((k1[i] + 2.0 * k2[i]) + 2.0 * k3[i]) + k4[i]))
        .collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(OdeError::Divergence { t: t + h })
    }
}

/// Integrates to each of `times` and returns the state there.
pub fn integrate<F>(problem: &mut OdeProblem<'_, F>, times: &[f64], cfg: &SolveConfig) -> Result<Vec<Vec<f64>>, OdeError>
where
    F: FnMut(&[f64], &[f64], f64, &mut [f64]),
{
    cfg.validate()?;
    check_times(problem.t0, times)?;
    let mut x = problem.x0.clone();
    let mut t = problem.t0;
    let mut out = Vec::with_capacity(times.len());
    let mut dopri = match *cfg {
        SolveConfig::Dopri5 { rtol, atol } => Some(Dopri5::new(x.len(), rtol, atol)),
        _ => None,
    };
    for &target in times {
        if target > t {
            for (a, b) in problem.control.pieces(t, target) {
                let u = problem.control.at(a);
                match (cfg, dopri.as_mut()) {
                    (SolveConfig::Rk4 { substeps }, _) => {
                        let n = substeps.count(b - a);
                        let h = (b - a) / n as f64;
                        for k in 0..n {
                            x = rk4_step(&mut problem.rhs, &x, u, a + k as f64 * h, h)?;
                        }
                    }
                    (_, Some(d)) => d.advance(&mut problem.rhs, &mut x, u, a, b)?,
                    _ => unreachable!(),
                }
            }
            t = target;
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// One RK4 step recorded on the tape. `rhs(tape, x, t)` must return a node
/// with the same length as `x`.
pub fn rk4_step_tape<F>(tape: &mut Tape, rhs: &mut F, x: Var, t: f64, h: f64) -> Var
where
    F: FnMut(&mut Tape, Var, f64) -> Var,
{
    let k1 = rhs(tape, x, t);
    let d = tape.scale(k1, 0.5 * h);
    let x2 = tape.add(x, d);
    let k2 = rhs(tape, x2, t + 0.5 * h);
    let d = tape.scale(k2, 0.5 * h);
    let x3 = tape.add(x, d);
    let k3 = rhs(tape, x3, t + 0.5 * h);
    let d = tape.scale(k3, h);
    let x4 = tape.add(x, d);
    let k4 = rhs(tape, x4, t + h);
    let k2x2 = tape.scale(k2, 2.0);
    let k3x2 = tape.scale(k3, 2.0);
    let s = tape.add(k1, k2x2);
    let s = tape.add(s, k3x2);
    let s = tape.add(s, k4);
    let s = tape.scale(s, h / 6.0);
    tape.add(x, s)
}

/// Differentiable RK4 integration of `rhs(tape, x, u, t)` to each of
/// `times`, starting from the node `x0` at `t0`.
pub fn integrate_tape<F>(
    tape: &mut Tape,
    rhs: &mut F,
    x0: Var,
    t0: f64,
    times: &[f64],
    control: ZeroOrderHold<'_>,
    substeps: Substeps,
) -> Result<Vec<Var>, OdeError>
where
    F: FnMut(&mut Tape, Var, &[f64], f64) -> Var,
{
    check_times(t0, times)?;
    let mut x = x0;
    let mut t = t0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        if target > t {
            for (a, b) in control.pieces(t, target) {
                let u = control.at(a);
                let n = substeps.count(b - a);
                let h = (b - a) / n as f64;
                let mut f = |tape: &mut Tape, x: Var, t: f64| rhs(tape, x, u, t);
                for k in 0..n {
                    x = rk4_step_tape(tape, &mut f, x, a + k as f64 * h, h);
                }
                if !tape.value(x).iter().all(|v| v.is_finite()) {
                    return Err(OdeError::Divergence { t: b });
                }
            }
            t = target;
        }
        out.push(x);
    }
    Ok(out)
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Dopri5 {
    rtol: f64,
    atol: f64,
    h: Option<f64>,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Dopri5 {
    fn new(n: usize, rtol: f64, atol: f64) -> Self {
        Dopri5 {
            rtol,
            atol,
            h: None,
            k: core::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }

    fn err_norm(&self, y: &[f64], y_new: &[f64], err: &[f64]) -> f64 {
        let n = y.len().max(1);
        let s: f64 = (0..y.len())
            .map(|i| {
                let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                let e = err[i] / sc;
                e * e
            })
            .sum();
        crate::math::sqrt(s / n as f64)
    }

    /// Hairer's starting-step heuristic.
    fn initial_step<F>(&mut self, f: &mut F, y: &[f64], u: &[f64], t: f64, span: f64) -> f64
    where
        F: FnMut(&[f64], &[f64], f64, &mut [f64]),
    {
        let n = y.len();
        f(y, u, t, &mut self.k[0]);
        let sc: Vec<f64> = y.iter().map(|v| self.atol + self.rtol * v.abs()).collect();
        let rms = |v: &[f64]| crate::math::sqrt(v.iter().zip(&sc).map(|(a, s)| (a / s) * (a / s)).sum::<f64>() / n.max(1) as f64);
        let d0 = rms(y);
        let d1 = rms(&self.k[0]);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        axpy(&mut self.tmp, y, h0, &self.k[0].clone());
        let mut f1 = vec![0.0; n];
        f(&self.tmp, u, t + h0, &mut f1);
        let diff: Vec<f64> = f1.iter().zip(&self.k[0]).map(|(a, b)| a - b).collect();
        let d2 = rms(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            crate::math::pow(0.01 / d1.max(d2), 1.0 / 5.0)
        };
        (100.0 * h0).min(h1).min(span)
    }

    fn advance<F>(&mut self, f: &mut F, y: &mut Vec<f64>, u: &[f64], a: f64, b: f64) -> Result<(), OdeError>
    where
        F: FnMut(&[f64], &[f64], f64, &mut [f64]),
    {
        let n = y.len();
        let mut t = a;
        let mut h = match self.h {
            Some(h) => h.min(b - a),
            None => self.initial_step(f, y, u, a, b - a),
        };
        // controls may jump at `a`; first stage must be re-evaluated
        f(y, u, t, &mut self.k[0]);
        let mut err = vec![0.0; n];
        let mut nominal = h;
        while t < b {
            let last = t + h >= b;
            if last {
                nominal = nominal.max(h);
                h = b - t;
            }
            if h < MIN_ADAPTIVE_STEP && !last {
                return Err(OdeError::StepUnderflow { t });
            }
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let tmp = &mut self.tmp;
            for i in 0..n {
                tmp[i] = y[i] + h * A21 * k1[i];
            }
            f(tmp, u, t + C2 * h, k2);
            for i in 0..n {
                tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            f(tmp, u, t + C3 * h, k3);
            for i in 0..n {
                tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(tmp, u, t + C4 * h, k4);
            for i in 0..n {
                tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(tmp, u, t + C5 * h, k5);
            for i in 0..n {
                tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(tmp, u, t + h, k6);
            let y_new = &mut self.y_new;
            for i in 0..n {
                y_new[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            f(y_new, u, t + h, k7);
            for i in 0..n {
                err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            let en = self.err_norm(y, &self.y_new, &err);
            if !en.is_finite() {
                if h < MIN_ADAPTIVE_STEP {
                    return Err(OdeError::Divergence { t });
                }
                h *= 0.2;
                continue;
            }
            if en <= 1.0 {
                t = if last { b } else { t + h };
                y.copy_from_slice(&self.y_new);
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(OdeError::Divergence { t });
                }
                let [k1, .., k7] = &mut self.k;
                core::mem::swap(k1, k7);
                let fac = if en == 0.0 { 5.0 } else { (0.9 * crate::math::pow(en, -0.2)).clamp(0.2, 5.0) };
                let proposed = h * fac;
                if last {
                    // a clipped final step says little about the next piece
                    self.h = Some(proposed.max(nominal));
                } else {
                    h = proposed;
                    nominal = proposed;
                    self.h = Some(proposed);
                }
            } else {
                h *= (0.9 * crate::math::pow(en, -0.2)).clamp(0.2, 1.0);
                if h < MIN_ADAPTIVE_STEP {
                    return Err(OdeError::StepUnderflow { t });
                }
            }
        }
        Ok(())
    }
}
