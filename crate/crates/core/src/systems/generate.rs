use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{jitter_times, SystemError, SystemSpec};
use crate::odeint::{integrate, OdeProblem, SolveConfig, ZeroOrderHold};

/// Hidden parameters, initial state and per-sample controls of one
/// trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub params: Vec<f64>,
    pub x0: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub params: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Independent stream for trajectory `index` under a dataset seed.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Integrates the true system through `times` with the generation solver.
/// `instance.controls[k]` is held from `times[k]` to `times[k + 1]`.
pub fn generate_trajectory(
    spec: &SystemSpec,
    instance: &Instance,
    times: &[f64],
    id: u64,
    seed: u64,
) -> Result<Trajectory, SystemError> {
    spec.validate_params(&instance.params)?;
    let controls = if spec.control_dim == 0 {
        ZeroOrderHold::none()
    } else {
        ZeroOrderHold::new(times, &instance.controls)
    };
    let phi = instance.params.clone();
    let mut problem = OdeProblem {
        rhs: |x: &[f64], u: &[f64], _t: f64, dx: &mut [f64]| spec.rhs(&phi, x, u, dx),
        x0: instance.x0.clone(),
        t0: times[0],
        control: controls,
    };
    let states = integrate(&mut problem, times, &SolveConfig::generation())?;
    Ok(Trajectory {
        id,
        seed,
        times: times.to_vec(),
        states,
        controls: instance.controls.clone(),
        params: instance.params.clone(),
    })
}

/// Uniform output grid `0, dt, 2 dt, ...` with `steps` samples.
pub fn uniform_times(dt: f64, steps: usize) -> Vec<f64> {
    (0..steps).map(|k| k as f64 * dt).collect()
}

/// Trajectories `first_id .. first_id + count`, each drawn from its own
/// stream so any subset can be regenerated alone. Jitter is drawn after the
/// instance, so the same id yields the same parameters at every jitter level.
pub fn generate_dataset(
    spec: &SystemSpec,
    seed: u64,
    first_id: u64,
    count: usize,
    steps: usize,
    jitter: f64,
) -> Result<Vec<Trajectory>, SystemError> {
    (first_id..first_id + count as u64)
        .map(|id| generate_one(spec, seed, id, steps, jitter))
        .collect()
}

pub(crate) fn generate_one(
    spec: &SystemSpec,
    seed: u64,
    id: u64,
    steps: usize,
    jitter: f64,
) -> Result<Trajectory, SystemError> {
    let mut rng = trajectory_rng(seed, id);
    let instance = spec.sample_instance(&mut rng, steps);
    let mut times = uniform_times(spec.dt_output, steps);
    if jitter > 0.0 {
        times = jitter_times(&times, jitter, &mut rng)?;
    }
    generate_trajectory(spec, &instance, &times, id, seed)
}
