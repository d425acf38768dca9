use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::systems::Trajectory;

pub const HISTORY_LEN: usize = 32;
pub const HORIZON: usize = 16;
pub const WINDOW_STRIDE: usize = 16;

/// Contiguous slice of one trajectory: `history` observed states followed
/// by the target states. `times` and `controls` cover the whole slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub traj_id: u64,
    pub start: usize,
    pub history: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub params: Vec<f64>,
}

impl Window {
    pub fn horizon(&self) -> usize {
        self.times.len() - self.history
    }

    pub fn history_states(&self) -> &[Vec<f64>] {
        &self.states[..self.history]
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.states[self.history..]
    }

    pub fn last_observed(&self) -> &[f64] {
        &self.states[self.history - 1]
    }
}

/// Overlapping windows of `history + horizon` samples every `stride` steps.
pub fn windows(traj: &Trajectory, history: usize, horizon: usize, stride: usize) -> Vec<Window> {
    assert!(stride >= 1 && history >= 1);
    let len = history + horizon;
    if traj.len() < len {
        return Vec::new();
    }
    (0..=traj.len() - len)
        .step_by(stride)
        .map(|s| Window {
            traj_id: traj.id,
            start: s,
            history,
            times: traj.times[s..s + len].to_vec(),
            states: traj.states[s..s + len].to_vec(),
            controls: traj.controls[s..s + len].to_vec(),
            params: traj.params.clone(),
        })
        .collect()
}

/// Windows of every trajectory with the default 32 + 16 layout.
pub fn windows_of(trajs: &[Trajectory], stride: usize) -> Vec<Window> {
    trajs
        .iter()
        .flat_map(|t| windows(t, HISTORY_LEN, HORIZON, stride))
        .collect()
}
