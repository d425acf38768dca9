//! The randomized-parameter cartpole environment and random-shooting
//! model-predictive control over any learned dynamics model.

mod env;
mod mpc;

pub use env::{
    collect_dataset, collect_trajectory, euler_step, random_action, within_limits, EvilCartpole, Step, DT, MAX_STEPS,
    THETA_LIMIT, X_LIMIT,
};
pub use mpc::{
    best_sequence, decode_sequence, exhaustive_plan, mpc_act, sample_sequences, score, Dynamics, History, MpcConfig,
    Oracle, Plan,
};

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::systems::{trajectory_rng, SystemError};
use crate::training::Executor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("episode is over; start a new one")]
    EpisodeDone,
    #[error("state and action must be finite")]
    NonFinite,
    #[error("planning needs {needed} warmup actions, history has {got}")]
    Warmup { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Who picks actions after the warmup.
#[derive(Clone, Copy)]
pub enum Controller<'a> {
    Random,
    /// MPC on the exact dynamics with each episode's true parameters.
    Oracle,
    Model(&'a dyn Dynamics),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// State the action was applied in.
    pub state: [f64; 4],
    pub action: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub params: [f64; 3],
    pub episode_return: f64,
    pub steps: Vec<StepRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSummary {
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean; zero for a single episode.
    pub stderr: f64,
}

impl ControlSummary {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n.max(1.0);
        let stderr = if returns.len() > 1 {
            let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
            crate::math::sqrt(var / n)
        } else {
            0.0
        };
        ControlSummary { returns, mean, stderr }
    }
}

/// Runs one episode. The environment draws from stream `2 e` of `seed` and
/// the policy from stream `2 e + 1`, so every controller faces the same
/// episodes.
pub fn run_episode<E: Executor>(
    controller: Controller<'_>,
    episode: usize,
    seed: u64,
    cfg: &MpcConfig,
    exec: &E,
) -> Result<EpisodeLog, ControlError> {
    cfg.validate()?;
    let mut env_rng = trajectory_rng(seed, 2 * episode as u64);
    let mut rng = trajectory_rng(seed, 2 * episode as u64 + 1);
    let mut env = EvilCartpole::sample(&mut env_rng);
    let oracle = Oracle {
        phi: env.hidden_params(),
    };
    let mut history = History::new(env.state());
    let mut steps = Vec::new();
    while !env.is_done() {
        let action = if env.steps() < cfg.warmup {
            random_action(&mut rng)
        } else {
            match controller {
                Controller::Random => random_action(&mut rng),
                Controller::Oracle => mpc_act(&oracle, &history, cfg, &mut rng, exec)?.action,
                Controller::Model(m) => mpc_act(m, &history, cfg, &mut rng, exec)?.action,
            }
        };
        let state = env.state();
        let out = env.step(action)?;
        steps.push(StepRecord {
            step: steps.len(),
            state,
            action,
            reward: out.reward,
        });
        history.push(action, out.state);
    }
    Ok(EpisodeLog {
        episode,
        params: env.hidden_params(),
        episode_return: env.episode_return(),
        steps,
    })
}

/// Mean return and standard error over `episodes` episodes. Warmup steps
/// count toward each return.
pub fn evaluate_control<E: Executor>(
    controller: Controller<'_>,
    episodes: usize,
    seed: u64,
    cfg: &MpcConfig,
    exec: &E,
) -> Result<(ControlSummary, Vec<EpisodeLog>), ControlError> {
    if episodes == 0 {
        return Err(ControlError::Config("need at least one episode"));
    }
    let logs = (0..episodes)
        .map(|e| run_episode(controller, e, seed, cfg, exec))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = ControlSummary::from_returns(logs.iter().map(|l| l.episode_return).collect());
    Ok((summary, logs))
}
