use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::systems::{cartpole_rhs, Interval, SystemKind, SystemSpec, Trajectory, CARTPOLE_FORCE};

pub const DT: f64 = 0.02;
pub const MAX_STEPS: usize = 200;
pub const THETA_LIMIT: f64 = core::f64::consts::PI / 15.0;
pub const X_LIMIT: f64 = 2.4;
const TEST_IC: Interval = Interval::new(-0.05, 0.05);

/// Both reward thresholds hold.
pub fn within_limits(s: &[f64]) -> bool {
    s[2].abs() <= THETA_LIMIT && s[0].abs() <= X_LIMIT
}

/// One semi-implicit Euler step of the cartpole: velocities first, then
/// positions from the updated velocities.
pub fn euler_step(phi: &[f64], s: &[f64; 4], force: f64) -> [f64; 4] {
    let d = cartpole_rhs(phi, s, force);
    let vx = s[1] + DT * d[1];
    let omega = s[3] + DT * d[3];
    [s[0] + DT * vx, vx, s[2] + DT * omega, omega]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: [f64; 4],
    pub reward: f64,
    pub done: bool,
}

/// Cartpole with pole half-length and masses drawn per episode.
#[derive(Clone, Debug)]
pub struct EvilCartpole {
    phi: [f64; 3],
    state: [f64; 4],
    steps: usize,
    total: f64,
    done: bool,
}

impl EvilCartpole {
    pub fn new(phi: [f64; 3], state: [f64; 4]) -> Result<Self, ControlError> {
        SystemSpec::new(SystemKind::Cartpole).validate_params(&phi)?;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(ControlError::NonFinite);
        }
        Ok(EvilCartpole {
            phi,
            state,
            steps: 0,
            total: 0.0,
            done: false,
        })
    }

    /// Parameters from the system's ranges and a start near upright rest.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let spec = SystemSpec::new(SystemKind::Cartpole);
        let p = spec.sample_params(rng);
        let phi = [p[0], p[1], p[2]];
        let state = [0; 4].map(|_| TEST_IC.sample(rng));
        EvilCartpole::new(phi, state).expect("sampled parameters are positive")
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// Ground-truth parameters. Only oracle baselines may read these.
    pub fn hidden_params(&self) -> [f64; 3] {
        self.phi
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn episode_return(&self) -> f64 {
        self.total
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, force: f64) -> Result<Step, ControlError> {
        if self.done {
            return Err(ControlError::EpisodeDone);
        }
        if !force.is_finite() {
            return Err(ControlError::NonFinite);
        }
        self.state = euler_step(&self.phi, &self.state, force);
        self.steps += 1;
        let ok = within_limits(&self.state);
        let reward = if ok { 1.0 } else { 0.0 };
        self.total += reward;
        self.done = !ok || self.steps >= MAX_STEPS;
        Ok(Step {
            state: self.state,
            reward,
            done: self.done,
        })
    }
}

/// Uniform draw from the two admissible forces.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.gen::<bool>() {
        CARTPOLE_FORCE
    } else {
        -CARTPOLE_FORCE
    }
}

/// Random-action rollout of the environment dynamics, ignoring termination,
/// from the training parameter and initial-state ranges. `controls[k]` is
/// the force applied between samples `k` and `k + 1`.
pub fn collect_trajectory<R: Rng + ?Sized>(rng: &mut R, steps: usize, id: u64, seed: u64) -> Trajectory {
    let spec = SystemSpec::new(SystemKind::Cartpole);
    let params = spec.sample_params(rng);
    let x0 = spec.sample_initial_state(rng);
    let mut s = [x0[0], x0[1], x0[2], x0[3]];
    let mut states = Vec::with_capacity(steps);
    let mut controls = Vec::with_capacity(steps);
    for _ in 0..steps {
        let f = random_action(rng);
        states.push(s.to_vec());
        controls.push(alloc::vec![f]);
        s = euler_step(&params, &s, f);
    }
    Trajectory {
        id,
        seed,
        times: (0..steps).map(|k| k as f64 * DT).collect(),
        states,
        controls,
        params,
    }
}

/// Random-action trajectories `first_id .. first_id + count`, each drawn
/// from its own stream.
pub fn collect_dataset(seed: u64, first_id: u64, count: usize, steps: usize) -> Vec<Trajectory> {
    (first_id..first_id + count as u64)
        .map(|id| collect_trajectory(&mut crate::systems::trajectory_rng(seed, id), steps, id, seed))
        .collect()
}
