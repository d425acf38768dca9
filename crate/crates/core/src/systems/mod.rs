//! Parameterized ODE families, instance sampling, trajectory generation and
//! data corruption.

mod corrupt;
mod dynamics;
mod generate;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::odeint::OdeError;

pub use corrupt::{add_noise, jitter_times, CorruptionConfig, NoiseMode, NoiseScales, NOISE_REFERENCE_COUNT};
pub use dynamics::{
    ballistic_rhs, cartpole_rhs, fusion_rhs, lorenz_rhs, GRAVITY, ION_DENSITY, ION_MASS, MAJOR_RADIUS,
};
pub use generate::{generate_dataset, generate_trajectory, trajectory_rng, uniform_times, Instance, Trajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SystemError {
    #[error("parameter {name} = {value} is outside its physical domain")]
    ParamDomain { name: &'static str, value: f64 },
    #[error(transparent)]
    Solver(#[from] OdeError),
    #[error("jitter {jitter} s produced a non-increasing time grid")]
    NonMonotoneTimes { jitter: f64 },
    #[error("relative noise must be >= 0, got {0}")]
    NegativeNoise(f64),
    #[error("noise scales have {got} components, state has {expected}")]
    ScaleLength { expected: usize, got: usize },
    #[error("unknown system {0:?}")]
    UnknownSystem(alloc::string::String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Lorenz,
    Ballistic,
    Cartpole,
    Fusion,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [
        SystemKind::Lorenz,
        SystemKind::Ballistic,
        SystemKind::Cartpole,
        SystemKind::Fusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Lorenz => "lorenz",
            SystemKind::Ballistic => "ballistic",
            SystemKind::Cartpole => "cartpole",
            SystemKind::Fusion => "fusion",
        }
    }

    pub fn from_name(s: &str) -> Result<Self, SystemError> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SystemError::UnknownSystem(s.into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen_range(self.lo..self.hi)
    }
}

/// A parameterized ODE family together with its sampling distributions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub state_dim: usize,
    pub control_dim: usize,
    pub param_ranges: Vec<Interval>,
    pub ic_ranges: Vec<Interval>,
    /// Components whose equations the Partial model keeps.
    pub partial_mask: Vec<bool>,
    pub dt_output: f64,
    pub state_names: Vec<&'static str>,
    pub param_names: Vec<&'static str>,
    pub control_names: Vec<&'static str>,
}

const BALLISTIC_MASS: Interval = Interval::new(1.0, 100.0);
const BALLISTIC_DRAG: Interval = Interval::new(0.4, 3.0);

/// Action magnitude used by cart-pole control and data generation.
pub const CARTPOLE_FORCE: f64 = 10.0;

/// Fusion actuator bounds: injected power (W) and torque (N m).
pub const FUSION_POWER_RANGE: Interval = Interval::new(0.0, 1e7);
pub const FUSION_TORQUE_RANGE: Interval = Interval::new(-0.1, 0.5);

impl SystemSpec {
    pub fn new(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Lorenz => SystemSpec {
                kind,
                state_dim: 3,
                control_dim: 0,
                param_ranges: vec![
                    Interval::new(15.0, 35.0),
                    Interval::new(9.0, 12.0),
                    Interval::new(1.0, 3.0),
                ],
                ic_ranges: vec![Interval::new(0.0, 5.0); 3],
                partial_mask: vec![true, true, false],
                dt_output: 0.5,
                state_names: vec!["x", "y", "z"],
                param_names: vec!["rho", "sigma", "beta"],
                control_names: vec![],
            },
            SystemKind::Ballistic => SystemSpec {
                kind,
                state_dim: 4,
                control_dim: 0,
                param_ranges: vec![Interval::new(
                    BALLISTIC_MASS.lo * GRAVITY / BALLISTIC_DRAG.hi,
                    BALLISTIC_MASS.hi * GRAVITY / BALLISTIC_DRAG.lo,
                )],
                ic_ranges: vec![
                    Interval::new(-100.0, 100.0),
                    Interval::new(0.0, 100.0),
                    Interval::new(0.0, 200.0),
                    Interval::new(0.0, 100.0),
                ],
                partial_mask: vec![true, true, false, false],
                dt_output: 0.5,
                state_names: vec!["x", "vx", "y", "vy"],
                param_names: vec!["v_t"],
                control_names: vec![],
            },
            SystemKind::Cartpole => SystemSpec {
                kind,
                state_dim: 4,
                control_dim: 1,
                param_ranges: vec![
                    Interval::new(0.6, 1.2),
                    Interval::new(0.5, 2.0),
                    Interval::new(0.03, 0.2),
                ],
                ic_ranges: vec![
                    Interval::new(-2.0, 2.0),
                    Interval::new(-1.0, 1.0),
                    Interval::new(-0.2, 0.2),
                    Interval::new(-0.1, 0.1),
                ],
                partial_mask: vec![false, false, true, true],
                dt_output: 0.02,
                state_names: vec!["x", "vx", "theta", "omega"],
                param_names: vec!["l", "m_c", "m_p"],
                control_names: vec!["force"],
            },
            SystemKind::Fusion => SystemSpec {
                kind,
                state_dim: 2,
                control_dim: 2,
                param_ranges: vec![Interval::new(0.05, 0.3), Interval::new(0.05, 0.3)],
                ic_ranges: vec![Interval::new(0.0, 1e6), Interval::new(0.0, 1e5)],
                partial_mask: vec![true, false],
                dt_output: 0.05,
                state_names: vec!["energy", "rotation"],
                param_names: vec!["tau_e", "tau_m"],
                control_names: vec!["power", "torque"],
            },
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn param_dim(&self) -> usize {
        self.param_ranges.len()
    }

    pub fn validate_params(&self, phi: &[f64]) -> Result<(), SystemError> {
        match self.kind {
            SystemKind::Ballistic => ballistic_rhs(phi, &[0.0; 4]).map(|_| ()),
            SystemKind::Fusion => fusion_rhs(phi, &[0.0; 2], &[0.0; 2]).map(|_| ()),
            SystemKind::Cartpole => {
                for (name, v) in [("l", phi[0]), ("m_c", phi[1]), ("m_p", phi[2])] {
                    if !(v > 0.0) {
                        return Err(SystemError::ParamDomain { name, value: v });
                    }
                }
                Ok(())
            }
            SystemKind::Lorenz => Ok(()),
        }
    }

    /// Plain right-hand side. Parameters are assumed valid.
    pub fn rhs(&self, phi: &[f64], x: &[f64], u: &[f64], dx: &mut [f64]) {
        match self.kind {
            SystemKind::Lorenz => dx.copy_from_slice(&lorenz_rhs(phi, x)),
            SystemKind::Ballistic => dx.copy_from_slice(&dynamics::ballistic_unchecked(phi, x)),
            SystemKind::Cartpole => dx.copy_from_slice(&cartpole_rhs(phi, x, u[0])),
            SystemKind::Fusion => dx.copy_from_slice(&dynamics::fusion_unchecked(phi, x, u)),
        }
    }

    /// Taped right-hand side; `u` may be any node when the family has no
    /// control input.
    pub fn rhs_tape(&self, tape: &mut Tape, phi: Var, x: Var, u: Var) -> Var {
        match self.kind {
            SystemKind::Lorenz => dynamics::lorenz_tape(tape, phi, x),
            SystemKind::Ballistic => dynamics::ballistic_tape(tape, phi, x),
            SystemKind::Cartpole => dynamics::cartpole_tape(tape, phi, x, u),
            SystemKind::Fusion => dynamics::fusion_tape(tape, phi, x, u),
        }
    }

    pub fn param_midpoints(&self) -> Vec<f64> {
        self.param_ranges.iter().map(Interval::mid).collect()
    }

    pub fn sample_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            SystemKind::Ballistic => {
                let m = BALLISTIC_MASS.sample(rng);
                let cd = BALLISTIC_DRAG.sample(rng);
                vec![m * GRAVITY / cd]
            }
            _ => self.param_ranges.iter().map(|r| r.sample(rng)).collect(),
        }
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.ic_ranges.iter().map(|r| r.sample(rng)).collect()
    }

    /// One control vector per sample time.
    pub fn sample_controls<R: Rng + ?Sized>(&self, rng: &mut R, steps: usize) -> Vec<Vec<f64>> {
        match self.kind {
            SystemKind::Lorenz | SystemKind::Ballistic => vec![Vec::new(); steps],
            SystemKind::Cartpole => (0..steps)
                .map(|_| {
                    vec![if rng.gen_bool(0.5) {
                        CARTPOLE_FORCE
                    } else {
                        -CARTPOLE_FORCE
                    }]
                })
                .collect(),
            SystemKind::Fusion => fusion_controls(rng, steps),
        }
    }

    /// Draws parameters, initial state and a control sequence.
    pub fn sample_instance<R: Rng + ?Sized>(&self, rng: &mut R, steps: usize) -> Instance {
        let params = self.sample_params(rng);
        let x0 = self.sample_initial_state(rng);
        let controls = self.sample_controls(rng, steps);
        Instance { params, x0, controls }
    }
}

/// Clipped Gaussian random walks for beam power and torque.
fn fusion_controls<R: Rng + ?Sized>(rng: &mut R, steps: usize) -> Vec<Vec<f64>> {
    let mut p = rng.gen_range(1e6..6e6);
    let mut tq = rng.gen_range(0.0..0.3);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(vec![p, tq]);
        let dp: f64 = rng.sample(StandardNormal);
        let dt: f64 = rng.sample(StandardNormal);
        p = (p + 3e5 * dp).clamp(FUSION_POWER_RANGE.lo, FUSION_POWER_RANGE.hi);
        tq = (tq + 0.02 * dt).clamp(FUSION_TORQUE_RANGE.lo, FUSION_TORQUE_RANGE.hi);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn taped_rhs_matches_plain_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in SystemKind::ALL {
            let spec = SystemSpec::new(kind);
            for _ in 0..20 {
                let inst = spec.sample_instance(&mut rng, 1);
                let u = &inst.controls[0];
                let mut dx = vec![0.0; spec.state_dim];
                spec.rhs(&inst.params, &inst.x0, u, &mut dx);
                let mut t = Tape::new(&[]);
                let phi = t.input(&inst.params);
                let x = t.input(&inst.x0);
                let uv = t.input(if u.is_empty() { &[0.0] } else { u });
                let y = spec.rhs_tape(&mut t, phi, x, uv);
                assert_eq!(t.value(y), &dx[..], "{kind:?}");
            }
        }
    }

    #[test]
    fn taped_rhs_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in SystemKind::ALL {
            let spec = SystemSpec::new(kind);
            let inst = spec.sample_instance(&mut rng, 1);
            let u = if inst.controls[0].is_empty() {
                vec![0.0]
            } else {
                inst.controls[0].clone()
            };
            let seed: Vec<f64> = (0..spec.state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = |phi: &[f64], x: &[f64]| -> f64 {
                let mut dx = vec![0.0; spec.state_dim];
                spec.rhs(phi, x, &u, &mut dx);
                dx.iter().zip(&seed).map(|(a, b)| a * b).sum()
            };
            let mut t = Tape::new(&[]);
            let phi = t.input(&inst.params);
            let x = t.input(&inst.x0);
            let uv = t.input(&u);
            let y = spec.rhs_tape(&mut t, phi, x, uv);
            let adj = t.backward(y, &seed).unwrap();
            for i in 0..spec.param_dim() {
                let h = 1e-6 * inst.params[i].abs().max(1e-3);
                let mut pp = inst.params.clone();
                let mut pm = inst.params.clone();
                pp[i] += h;
                pm[i] -= h;
                let fd = (f(&pp, &inst.x0) - f(&pm, &inst.x0)) / (2.0 * h);
                let g = adj.wrt(phi)[i];
                assert!((g - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{kind:?} phi[{i}] {g} vs {fd}");
            }
            for i in 0..spec.state_dim {
                let h = 1e-6 * inst.x0[i].abs().max(1e-2);
                let mut xp = inst.x0.clone();
                let mut xm = inst.x0.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (f(&inst.params, &xp) - f(&inst.params, &xm)) / (2.0 * h);
                let g = adj.wrt(x)[i];
                assert!((g - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{kind:?} x[{i}] {g} vs {fd}");
            }
        }
    }

    #[test]
    fn lorenz_draws_within_ranges() {
        let spec = SystemSpec::new(SystemKind::Lorenz);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let inst = spec.sample_instance(&mut rng, 4);
            assert!((15.0..=35.0).contains(&inst.params[0]));
            assert!((9.0..=12.0).contains(&inst.params[1]));
            assert!((1.0..=3.0).contains(&inst.params[2]));
            assert!(inst.x0.iter().all(|v| (0.0..=5.0).contains(v)));
            assert!(inst.controls.iter().all(|c| c.is_empty()));
        }
    }

    #[test]
    fn sampling_statistics_over_ten_thousand_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for kind in [SystemKind::Lorenz, SystemKind::Cartpole, SystemKind::Fusion] {
            let spec = SystemSpec::new(kind);
            let n = 10_000;
            let draws: Vec<Vec<f64>> = (0..n).map(|_| spec.sample_params(&mut rng)).collect();
            for (i, r) in spec.param_ranges.iter().enumerate() {
                let col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(lo >= r.lo && hi <= r.hi);
                let mean = col.iter().sum::<f64>() / n as f64;
                // std of the mean of U(lo, hi)
                let sd = r.width() / crate::math::sqrt(12.0 * n as f64);
                assert!((mean - r.mid()).abs() < 3.0 * sd, "{kind:?} {i}");
            }
        }
    }

    #[test]
    fn ballistic_terminal_velocity_from_mass_and_drag() {
        let spec = SystemSpec::new(SystemKind::Ballistic);
        let mut a = ChaCha8Rng::seed_from_u64(8);
        let mut b = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let vt = spec.sample_params(&mut a)[0];
            let m = b.gen_range(1.0..100.0);
            let cd = b.gen_range(0.4..3.0);
            assert_eq!(vt, m * GRAVITY / cd);
            assert!(spec.param_ranges[0].contains(vt));
        }
    }

    #[test]
    fn control_generators() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cp = SystemSpec::new(SystemKind::Cartpole).sample_controls(&mut rng, 500);
        assert!(cp.iter().all(|c| c[0] == 10.0 || c[0] == -10.0));
        assert!(cp.iter().any(|c| c[0] > 0.0) && cp.iter().any(|c| c[0] < 0.0));
        let fu = SystemSpec::new(SystemKind::Fusion).sample_controls(&mut rng, 500);
        assert!(fu.iter().all(|c| FUSION_POWER_RANGE.contains(c[0]) && FUSION_TORQUE_RANGE.contains(c[1])));
    }

    #[test]
    fn masks_and_names() {
        for kind in SystemKind::ALL {
            let s = SystemSpec::new(kind);
            assert_eq!(s.partial_mask.len(), s.state_dim);
            assert!(s.partial_mask.iter().any(|m| !m));
            assert!(s.param_ranges.iter().all(|r| r.lo < r.hi && r.lo.is_finite() && r.hi.is_finite()));
            assert_eq!(SystemKind::from_name(kind.name()).unwrap(), kind);
        }
        assert!(SystemKind::from_name("pendulum").is_err());
    }
}
