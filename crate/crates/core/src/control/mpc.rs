use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::{euler_step, within_limits, DT};
use super::ControlError;
use crate::baselines::SparseModel;
use crate::models::{Mode, NdsModel};
use crate::odeint::rk4_step;
use crate::systems::CARTPOLE_FORCE;
use crate::training::{Executor, Window};

/// Observed states and the actions taken between them. `states` always
/// holds one more entry than `actions`; the last state is the current one.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub states: Vec<[f64; 4]>,
    pub actions: Vec<f64>,
}

impl History {
    pub fn new(start: [f64; 4]) -> Self {
        History {
            states: vec![start],
            actions: Vec::new(),
        }
    }

    pub fn push(&mut self, action: f64, next: [f64; 4]) {
        self.actions.push(action);
        self.states.push(next);
    }

    pub fn current(&self) -> &[f64; 4] {
        self.states.last().expect("history is never empty")
    }
}

/// A model of the cartpole usable for planning.
pub trait Dynamics: Sync {
    /// Predicted states after each of `actions`, applied in turn from the
    /// current state of `history`. `None` when the rollout diverges.
    fn predict(&self, history: &History, actions: &[f64]) -> Option<Vec<[f64; 4]>>;
}

/// Exact environment dynamics with known parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Oracle {
    pub phi: [f64; 3],
}

impl Dynamics for Oracle {
    fn predict(&self, history: &History, actions: &[f64]) -> Option<Vec<[f64; 4]>> {
        let mut s = *history.current();
        let mut out = Vec::with_capacity(actions.len());
        for &a in actions {
            s = euler_step(&self.phi, &s, a);
            if s.iter().any(|v| !v.is_finite()) {
                return None;
            }
            out.push(s);
        }
        Some(out)
    }
}

impl NdsModel {
    /// Window whose history is the latest `history_len` observed states
    /// (zero-padded in front) and whose controls are the past actions
    /// followed by `actions`, repeated at the end to fill the model's
    /// control span.
    pub fn planning_window(&self, history: &History, actions: &[f64]) -> Window {
        let h = self.config.history_len;
        let horizon = if self.mode() == Mode::FcDirect {
            self.config.horizon.max(actions.len())
        } else {
            actions.len()
        };
        let span = h + horizon.max(self.config.horizon);
        let t = history.states.len() - 1;
        let last = *actions.last().unwrap_or(&0.0);
        let states = (0..h)
            .map(|i| match (t + 1 + i).checked_sub(h) {
                Some(g) => history.states[g].to_vec(),
                None => vec![0.0; 4],
            })
            .collect();
        let controls = (0..span)
            .map(|i| {
                let u = match (t + 1 + i).checked_sub(h) {
                    None => 0.0,
                    Some(g) if g < t => history.actions[g],
                    Some(g) => actions.get(g - t).copied().unwrap_or(last),
                };
                vec![u]
            })
            .collect();
        Window {
            traj_id: 0,
            start: 0,
            history: h,
            times: (0..h + horizon).map(|k| k as f64 * DT).collect(),
            states,
            controls,
            params: Vec::new(),
        }
    }
}

impl Dynamics for NdsModel {
    fn predict(&self, history: &History, actions: &[f64]) -> Option<Vec<[f64; 4]>> {
        if actions.is_empty() {
            return Some(Vec::new());
        }
        let pred = self.rollout(&self.planning_window(history, actions)).ok()?;
        let out: Vec<[f64; 4]> = pred
            .iter()
            .take(actions.len())
            .map(|s| [s[0], s[1], s[2], s[3]])
            .collect();
        out.iter().flatten().all(|v| v.is_finite()).then_some(out)
    }
}

impl Dynamics for SparseModel {
    fn predict(&self, history: &History, actions: &[f64]) -> Option<Vec<[f64; 4]>> {
        let mut rhs = |x: &[f64], u: &[f64], _t: f64, dx: &mut [f64]| self.rhs(x, u, dx);
        let mut s = history.current().to_vec();
        let mut out = Vec::with_capacity(actions.len());
        for &a in actions {
            s = rk4_step(&mut rhs, &s, &[a], 0.0, DT).ok()?;
            if s.iter().any(|v| !v.is_finite()) {
                return None;
            }
            out.push([s[0], s[1], s[2], s[3]]);
        }
        Some(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    pub n_samples: usize,
    pub horizon: usize,
    pub warmup: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            n_samples: 1000,
            horizon: 10,
            warmup: 8,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.n_samples == 0 {
            return Err(ControlError::Config("n_samples must be >= 1"));
        }
        if self.horizon == 0 || self.horizon > 63 {
            return Err(ControlError::Config("horizon must be in 1..=63"));
        }
        Ok(())
    }
}

/// Action sequence whose step `k` is `+F` when bit `k` of `code` is set.
pub fn decode_sequence(code: u64, horizon: usize) -> Vec<f64> {
    (0..horizon)
        .map(|k| if code >> k & 1 == 1 { CARTPOLE_FORCE } else { -CARTPOLE_FORCE })
        .collect()
}

/// `min(n, 2^horizon)` distinct action sequences in random order.
pub fn sample_sequences<R: Rng + ?Sized>(rng: &mut R, n: usize, horizon: usize) -> Vec<Vec<f64>> {
    let total = 1u64 << horizon;
    let n = (n as u64).min(total);
    let codes: Vec<u64> = if total <= 4 * n {
        let mut all: Vec<u64> = (0..total).collect();
        for i in 0..n as usize {
            let j = rng.gen_range(i..all.len());
            all.swap(i, j);
        }
        all.truncate(n as usize);
        all
    } else {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(n as usize);
        while (out.len() as u64) < n {
            let c = rng.gen_range(0..total);
            if seen.insert(c) {
                out.push(c);
            }
        }
        out
    };
    codes.into_iter().map(|c| decode_sequence(c, horizon)).collect()
}

/// Predicted reward: steps satisfying both limits before the first
/// violation. A diverged prediction scores negative infinity.
pub fn score(prediction: Option<&[[f64; 4]]>) -> f64 {
    match prediction {
        None => f64::NEG_INFINITY,
        Some(p) => p.iter().take_while(|s| within_limits(&s[..])).count() as f64,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub action: f64,
    pub index: usize,
    pub score: f64,
    pub sequence: Vec<f64>,
}

/// Scores every candidate in parallel and keeps the best, preferring the
/// lowest index among equals.
pub fn best_sequence<D, E>(model: &D, history: &History, candidates: Vec<Vec<f64>>, exec: &E) -> Result<Plan, ControlError>
where
    D: Dynamics + ?Sized,
    E: Executor,
{
    if candidates.is_empty() || candidates.iter().any(|c| c.is_empty()) {
        return Err(ControlError::Config("candidates must be non-empty sequences"));
    }
    let scores = exec.map(candidates.len(), |i| score(model.predict(history, &candidates[i]).as_deref()));
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    let sequence = candidates.into_iter().nth(best).expect("index in range");
    Ok(Plan {
        action: sequence[0],
        index: best,
        score: scores[best],
        sequence,
    })
}

/// Random-shooting model-predictive control over the two-force action set.
pub fn mpc_act<D, E, R>(model: &D, history: &History, cfg: &MpcConfig, rng: &mut R, exec: &E) -> Result<Plan, ControlError>
where
    D: Dynamics + ?Sized,
    E: Executor,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if history.actions.len() < cfg.warmup {
        return Err(ControlError::Warmup {
            needed: cfg.warmup,
            got: history.actions.len(),
        });
    }
    let candidates = sample_sequences(rng, cfg.n_samples, cfg.horizon);
    best_sequence(model, history, candidates, exec)
}

/// Best of all `2^horizon` sequences, enumerated in code order.
pub fn exhaustive_plan<D, E>(model: &D, history: &History, horizon: usize, exec: &E) -> Result<Plan, ControlError>
where
    D: Dynamics + ?Sized,
    E: Executor,
{
    if horizon == 0 || horizon > 20 {
        return Err(ControlError::Config("exhaustive search needs horizon in 1..=20"));
    }
    let candidates = (0..1u64 << horizon).map(|c| decode_sequence(c, horizon)).collect();
    best_sequence(model, history, candidates, exec)
}
