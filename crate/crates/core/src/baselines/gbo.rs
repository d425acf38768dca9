use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::linalg::solve;
use crate::odeint::{integrate, OdeProblem, SolveConfig, Substeps, ZeroOrderHold};
use crate::systems::SystemSpec;
use crate::training::Window;

const FD_STEP: f64 = 1e-6;
const LAMBDA0: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;
const LAMBDA_MIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GboConfig {
    /// Levenberg–Marquardt iterations per continuation stage.
    pub max_iter: usize,
    /// Relative cost decrease or step length below which a stage stops.
    pub tol: f64,
    /// Starting points: the initial guess plus uniform draws in the bounds.
    pub starts: usize,
    /// RK4 substep bound for the model trajectory.
    pub max_substep: f64,
    /// Fit growing prefixes of 2, 4, 8, ... samples before the full window.
    pub continuation: bool,
}

impl Default for GboConfig {
    fn default() -> Self {
        GboConfig {
            max_iter: 100,
            tol: 1e-10,
            starts: 5,
            max_substep: 1.0 / 128.0,
            continuation: true,
        }
    }
}

impl GboConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.max_iter == 0 || self.starts == 0 {
            return Err(BaselineError::Config("iterations and starts must be >= 1"));
        }
        if !(self.tol > 0.0) || !(self.max_substep > 0.0) {
            return Err(BaselineError::Config("tolerance and substep must be > 0"));
        }
        Ok(())
    }
}

/// Observed window of one trajectory and the starting guess for its
/// parameters. Bounds are the family's parameter ranges.
#[derive(Clone, Debug)]
pub struct GboProblem<'a> {
    pub spec: &'a SystemSpec,
    pub times: &'a [f64],
    pub states: &'a [Vec<f64>],
    /// One sample per time, or empty for uncontrolled systems.
    pub controls: &'a [Vec<f64>],
    pub phi0: Vec<f64>,
    pub config: GboConfig,
}

/// One Levenberg–Marquardt run on a fixed prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmStage {
    /// Number of observed samples fitted.
    pub samples: usize,
    pub phi: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost at the start and after every accepted step.
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GboFit {
    pub phi: Vec<f64>,
    /// Euclidean norm of the residual over the whole window.
    pub residual_norm: f64,
    /// Iterations summed over stages.
    pub iterations: usize,
    /// Whether the final stage met its tolerance.
    pub converged: bool,
    /// Which start produced this fit (0 is the initial guess).
    pub start: usize,
    pub stages: Vec<LmStage>,
}

impl GboProblem<'_> {
    fn check(&self) -> Result<(), BaselineError> {
        self.config.validate()?;
        let spec = self.spec;
        if self.times.len() < 2 {
            return Err(BaselineError::TooShort);
        }
        if self.states.len() != self.times.len() {
            return Err(BaselineError::Length {
                what: "observed states",
                expected: self.times.len(),
                got: self.states.len(),
            });
        }
        if let Some(s) = self.states.iter().find(|s| s.len() != spec.state_dim) {
            return Err(BaselineError::Length {
                what: "state",
                expected: spec.state_dim,
                got: s.len(),
            });
        }
        if spec.control_dim > 0 && self.controls.len() != self.times.len() {
            return Err(BaselineError::Length {
                what: "controls",
                expected: self.times.len(),
                got: self.controls.len(),
            });
        }
        if self.phi0.len() != spec.param_dim() {
            return Err(BaselineError::Length {
                what: "initial guess",
                expected: spec.param_dim(),
                got: self.phi0.len(),
            });
        }
        for (i, (v, r)) in self.phi0.iter().zip(&spec.param_ranges).enumerate() {
            if !(r.lo <= *v && *v <= r.hi) {
                return Err(BaselineError::OutOfBounds { index: i, value: *v });
            }
        }
        Ok(())
    }

    /// Model minus observation at samples `1..k`, or `None` if the model
    /// trajectory diverges.
    fn residuals(&self, phi: &[f64], k: usize) -> Option<Vec<f64>> {
        let spec = self.spec;
        let control = if spec.control_dim == 0 {
            ZeroOrderHold::none()
        } else {
            ZeroOrderHold::new(&self.times[..k], &self.controls[..k])
        };
        let mut problem = OdeProblem {
            rhs: |x: &[f64], u: &[f64], _t: f64, dx: &mut [f64]| spec.rhs(phi, x, u, dx),
            x0: self.states[0].clone(),
            t0: self.times[0],
            control,
        };
        let cfg = SolveConfig::Rk4 {
            substeps: Substeps::MaxStep(self.config.max_substep),
        };
        let pred = integrate(&mut problem, &self.times[1..k], &cfg).ok()?;
        let r: Vec<f64> = pred
            .iter()
            .zip(&self.states[1..k])
            .flat_map(|(p, o)| p.iter().zip(o).map(|(a, b)| a - b))
            .collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn project(&self, phi: &mut [f64]) {
        for (v, r) in phi.iter_mut().zip(&self.spec.param_ranges) {
            *v = v.clamp(r.lo, r.hi);
        }
    }

    /// Forward differences with a relative step, taken backwards at an
    /// upper bound. Columns are returned one per parameter.
    fn jacobian(&self, phi: &[f64], r: &[f64], k: usize) -> Result<Vec<Vec<f64>>, BaselineError> {
        let mut cols = Vec::with_capacity(phi.len());
        for j in 0..phi.len() {
            let range = self.spec.param_ranges[j];
            let mut h = FD_STEP * phi[j].abs().max(FD_STEP);
            if phi[j] + h > range.hi {
                h = -h;
            }
            let mut p = phi.to_vec();
            p[j] += h;
            let h = p[j] - phi[j];
            let rp = self
                .residuals(&p, k)
                .ok_or(BaselineError::Solver(crate::odeint::OdeError::Divergence { t: self.times[k - 1] }))?;
            cols.push(rp.iter().zip(r).map(|(a, b)| (a - b) / h).collect());
        }
        Ok(cols)
    }

    fn lm(&self, phi0: &[f64], k: usize) -> Result<LmStage, BaselineError> {
        let tol = self.config.tol;
        let mut phi = phi0.to_vec();
        let mut r = self
            .residuals(&phi, k)
            .ok_or(BaselineError::Solver(crate::odeint::OdeError::Divergence { t: self.times[k - 1] }))?;
        let mut cost = sum_sq(&r);
        let mut trace = vec![cost];
        let mut lambda = LAMBDA0;
        let mut iterations = 0;
        let mut converged = false;
        let d = phi.len();
        while iterations < self.config.max_iter && !converged {
            if cost == 0.0 {
                converged = true;
                break;
            }
            iterations += 1;
            let jac = self.jacobian(&phi, &r, k)?;
            let mut a = vec![0.0; d * d];
            let mut g = vec![0.0; d];
            for i in 0..d {
                g[i] = dot(&jac[i], &r);
                for j in 0..d {
                    a[i * d + j] = dot(&jac[i], &jac[j]);
                }
            }
            let diag_floor = 1e-12 * (0..d).map(|i| a[i * d + i]).fold(0.0, f64::max) + f64::MIN_POSITIVE;
            loop {
                let mut m = a.clone();
                for i in 0..d {
                    // Marquardt scaling by the curvature diagonal
                    m[i * d + i] += lambda * a[i * d + i].max(diag_floor);
                }
                let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
                let step = match solve(&m, &neg_g) {
                    Ok(s) => s,
                    Err(_) => {
                        lambda *= 10.0;
                        if lambda > LAMBDA_MAX {
                            converged = true;
                            break;
                        }
                        continue;
                    }
                };
                let mut cand: Vec<f64> = phi.iter().zip(&step).map(|(p, s)| p + s).collect();
                self.project(&mut cand);
                let rc = self.residuals(&cand, k);
                let c = rc.as_ref().map_or(f64::INFINITY, |r| sum_sq(r));
                if c < cost {
                    let moved = norm(&cand.iter().zip(&phi).map(|(a, b)| a - b).collect::<Vec<_>>());
                    if cost - c <= tol * cost || moved <= tol * (norm(&phi) + tol) {
                        converged = true;
                    }
                    phi = cand;
                    r = rc.expect("finite cost has residuals");
                    cost = c;
                    trace.push(cost);
                    lambda = (lambda / 10.0).max(LAMBDA_MIN);
                    break;
                }
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    // no descent left at working precision
                    converged = true;
                    break;
                }
            }
        }
        Ok(LmStage {
            samples: k,
            phi,
            cost,
            iterations,
            converged,
            trace,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sum_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

fn norm(v: &[f64]) -> f64 {
    crate::math::sqrt(sum_sq(v))
}

fn stage_lengths(len: usize, continuation: bool) -> Vec<usize> {
    let mut out = Vec::new();
    if continuation {
        let mut k = 2;
        while k < len {
            out.push(k);
            k *= 2;
        }
    }
    out.push(len);
    out
}

/// Bounded Levenberg–Marquardt from `problem.phi0`, on growing prefixes of
/// the window when continuation is enabled.
pub fn gbo_fit(problem: &GboProblem) -> Result<GboFit, BaselineError> {
    problem.check()?;
    fit_from(problem, &problem.phi0, 0)
}

fn fit_from(problem: &GboProblem, phi0: &[f64], start: usize) -> Result<GboFit, BaselineError> {
    let mut phi = phi0.to_vec();
    let mut stages = Vec::new();
    for k in stage_lengths(problem.times.len(), problem.config.continuation) {
        let stage = problem.lm(&phi, k)?;
        phi.clone_from(&stage.phi);
        stages.push(stage);
    }
    let last = stages.last().expect("at least one stage");
    Ok(GboFit {
        phi,
        residual_norm: crate::math::sqrt(last.cost),
        iterations: stages.iter().map(|s| s.iterations).sum(),
        converged: last.converged,
        start,
        stages,
    })
}

/// Fits from the initial guess and from `starts - 1` uniform draws; the
/// lowest final residual wins, ties going to the earlier start.
pub fn gbo_multistart<R: Rng + ?Sized>(problem: &GboProblem, rng: &mut R) -> Result<GboFit, BaselineError> {
    problem.check()?;
    let mut starts = vec![problem.phi0.clone()];
    for _ in 1..problem.config.starts {
        starts.push(problem.spec.param_ranges.iter().map(|r| r.sample(rng)).collect());
    }
    let mut best: Option<GboFit> = None;
    let mut first_err = None;
    for (i, s) in starts.iter().enumerate() {
        match fit_from(problem, s, i) {
            Ok(f) => {
                if best.as_ref().map_or(true, |b| f.residual_norm < b.residual_norm) {
                    best = Some(f);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one start"))
}

/// Fits the window's history, then integrates the fitted model from the
/// last observed state to the target times.
pub fn gbo_predict<R: Rng + ?Sized>(
    spec: &SystemSpec,
    window: &Window,
    config: &GboConfig,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, GboFit), BaselineError> {
    let h = window.history;
    let controls: &[Vec<f64>] = if spec.control_dim == 0 { &[] } else { &window.controls[..h] };
    let problem = GboProblem {
        spec,
        times: &window.times[..h],
        states: window.history_states(),
        controls,
        phi0: spec.param_midpoints(),
        config: config.clone(),
    };
    let fit = gbo_multistart(&problem, rng)?;
    let control = if spec.control_dim == 0 {
        ZeroOrderHold::none()
    } else {
        ZeroOrderHold::new(&window.times[h - 1..], &window.controls[h - 1..window.times.len()])
    };
    let phi = &fit.phi;
    let mut ode = OdeProblem {
        rhs: |x: &[f64], u: &[f64], _t: f64, dx: &mut [f64]| spec.rhs(phi, x, u, dx),
        x0: window.last_observed().to_vec(),
        t0: window.times[h - 1],
        control,
    };
    let cfg = SolveConfig::Rk4 {
        substeps: Substeps::MaxStep(config.max_substep),
    };
    let pred = integrate(&mut ode, &window.times[h..], &cfg)?;
    Ok((pred, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{generate_dataset, generate_trajectory, uniform_times, Instance, SystemKind};
    use crate::training::windows;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn problem<'a>(spec: &'a SystemSpec, times: &'a [f64], states: &'a [Vec<f64>], controls: &'a [Vec<f64>], phi0: Vec<f64>) -> GboProblem<'a> {
        GboProblem {
            spec,
            times,
            states,
            controls,
            phi0,
            config: GboConfig::default(),
        }
    }

    #[test]
    fn true_parameters_are_a_fixed_point() {
        let spec = SystemSpec::new(SystemKind::Ballistic);
        let tr = &generate_dataset(&spec, 4, 0, 1, 32, 0.0).unwrap()[0];
        let p = problem(&spec, &tr.times, &tr.states, &[], tr.params.clone());
        let fit = gbo_fit(&p).unwrap();
        assert!(fit.residual_norm < 1e-6, "{}", fit.residual_norm);
        assert!(fit.stages.last().unwrap().iterations <= 1);
        assert!(((fit.phi[0] - tr.params[0]) / tr.params[0]).abs() < 1e-8);
    }

    #[test]
    fn lorenz_from_midpoints() {
        let spec = SystemSpec::new(SystemKind::Lorenz);
        let tr = &generate_dataset(&spec, 8, 0, 1, 32, 0.0).unwrap()[0];
        let p = problem(&spec, &tr.times, &tr.states, &[], spec.param_midpoints());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit = gbo_multistart(&p, &mut rng).unwrap();
        let err = norm(&fit.phi.iter().zip(&tr.params).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(err < 1e-2, "{:?} vs {:?}", fit.phi, tr.params);
    }

    #[test]
    fn objective_never_increases() {
        let spec = SystemSpec::new(SystemKind::Lorenz);
        let tr = &generate_dataset(&spec, 9, 0, 1, 16, 0.0).unwrap()[0];
        let p = problem(&spec, &tr.times, &tr.states, &[], spec.param_midpoints());
        let fit = gbo_fit(&p).unwrap();
        assert!(fit.stages.len() > 1);
        for s in &fit.stages {
            assert!(s.trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn ballistic_terminal_velocity_within_one_percent() {
        let spec = SystemSpec::new(SystemKind::Ballistic);
        let trajs = generate_dataset(&spec, 12, 0, 5, 48, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for tr in &trajs {
            let w = &windows(tr, 32, 16, 16)[0];
            let (pred, fit) = gbo_predict(&spec, w, &GboConfig::default(), &mut rng).unwrap();
            assert!(((fit.phi[0] - tr.params[0]) / tr.params[0]).abs() < 1e-2);
            assert_eq!(pred.len(), 16);
            for (p, t) in pred.iter().zip(w.targets()) {
                for (a, b) in p.iter().zip(t) {
                    assert!((a - b).abs() < 1e-3 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn controlled_system_fit() {
        let spec = SystemSpec::new(SystemKind::Fusion);
        let times = uniform_times(spec.dt_output, 20);
        let inst = Instance {
            params: vec![0.15, 0.08],
            x0: vec![2e5, 1e4],
            controls: (0..20).map(|k| vec![2e6 + 1e5 * k as f64, 0.1]).collect(),
        };
        let tr = generate_trajectory(&spec, &inst, &times, 0, 0).unwrap();
        let p = problem(&spec, &tr.times, &tr.states, &tr.controls, spec.param_midpoints());
        let fit = gbo_fit(&p).unwrap();
        for (a, b) in fit.phi.iter().zip(&inst.params) {
            assert!(((a - b) / b).abs() < 1e-3, "{:?}", fit.phi);
        }
    }

    #[test]
    fn rejects_bad_problems() {
        let spec = SystemSpec::new(SystemKind::Lorenz);
        let times = [0.0];
        let states = [vec![1.0, 1.0, 1.0]];
        let p = problem(&spec, &times, &states, &[], spec.param_midpoints());
        assert_eq!(gbo_fit(&p).unwrap_err(), BaselineError::TooShort);
        let times = [0.0, 0.5];
        let states = [vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]];
        let p = problem(&spec, &times, &states, &[], vec![100.0, 10.0, 2.0]);
        assert!(matches!(gbo_fit(&p), Err(BaselineError::OutOfBounds { index: 0, .. })));
    }

    #[test]
    fn continuation_stages() {
        assert_eq!(stage_lengths(32, true), vec![2, 4, 8, 16, 32]);
        assert_eq!(stage_lengths(20, true), vec![2, 4, 8, 16, 20]);
        assert_eq!(stage_lengths(2, true), vec![2]);
        assert_eq!(stage_lengths(32, false), vec![32]);
    }
}
