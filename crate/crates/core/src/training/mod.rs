//! Windowing, rollout loss, Adam and the early-stopped training loop.

mod adam;
mod exec;
mod window;

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::models::{ModelError, NdsModel};

pub use adam::{Adam, AdamError};
pub use exec::{Executor, Sequential};
pub use window::{windows, windows_of, Window, HISTORY_LEN, HORIZON, WINDOW_STRIDE};

pub const LEARNING_RATE: f64 = 3e-3;
pub const BATCH_SIZE: usize = 128;
pub const PATIENCE: usize = 3;
/// Training aborts when more than this fraction of an epoch's batches fail.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("prediction has {got} steps x {got_dim}, target has {expected} x {expected_dim}")]
    Shape {
        expected: usize,
        expected_dim: usize,
        got: usize,
        got_dim: usize,
    },
    #[error("trajectory {0} appears in both the training and validation split")]
    Leakage(u64),
    #[error("{failed} of {batches} batches diverged in epoch {epoch}; first failure: {first}")]
    Diverged {
        epoch: usize,
        failed: usize,
        batches: usize,
        first: ModelError,
    },
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("no windows to {0}")]
    Empty(&'static str),
}

/// Weighted Eq. 4 loss: `sum_t sum_i (w_i (x_ti - xhat_ti))^2`.
pub fn rollout_loss(pred: &[Vec<f64>], target: &[Vec<f64>], weights: &[f64]) -> Result<f64, TrainError> {
    check_shapes(pred, target, weights)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            p.iter()
                .zip(t)
                .zip(weights)
                .map(|((a, b), w)| {
                    let d = w * (a - b);
                    d * d
                })
                .sum::<f64>()
        })
        .sum())
}

fn check_shapes(pred: &[Vec<f64>], target: &[Vec<f64>], weights: &[f64]) -> Result<(), TrainError> {
    let pd = pred.first().map_or(0, |p| p.len());
    let td = target.first().map_or(0, |p| p.len());
    let ragged = pred.iter().any(|p| p.len() != pd) || target.iter().any(|t| t.len() != td);
    if pred.len() != target.len() || pd != td || ragged || weights.len() != td {
        return Err(TrainError::Shape {
            expected: target.len(),
            expected_dim: td,
            got: pred.len(),
            got_dim: pd,
        });
    }
    Ok(())
}

/// Taped form of [`rollout_loss`].
pub fn rollout_loss_tape(tape: &mut Tape, pred: &[Var], target: &[Vec<f64>], weights: &[f64]) -> Var {
    let p = tape.concat(pred);
    let flat: Vec<f64> = target.iter().flatten().copied().collect();
    let w: Vec<f64> = target.iter().flat_map(|_| weights.iter().copied()).collect();
    let t = tape.constant(&flat);
    let wv = tape.constant(&w);
    let d = tape.sub(p, t);
    let d = tape.mul(d, wv);
    let sq = tape.square(d);
    tape.sum(sq)
}

/// Loss of one window and its gradient with respect to every weight.
pub fn window_loss_grad(model: &NdsModel, window: &Window, weights: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
    let mut tape = Tape::new(&model.params);
    let r = model.rollout_tape(&mut tape, window, None)?;
    let loss = rollout_loss_tape(&mut tape, &r.states, window.targets(), weights);
    tape.check_finite()?;
    let adj = tape.backward(loss, &[1.0])?;
    let grad = adj.into_params();
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(ModelError::NonFinite(crate::autodiff::AdError::NonFinite {
            node: loss.index(),
            op: "gradient",
        }));
    }
    Ok((tape.scalar(loss), grad))
}

/// Loss of one window, no gradient.
pub fn window_loss(model: &NdsModel, window: &Window, weights: &[f64]) -> Result<f64, ModelError> {
    let pred = model.rollout(window)?;
    Ok(rollout_loss(&pred, window.targets(), weights).expect("rollout matches window shape"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Rescale the batch gradient to at most this norm.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: LEARNING_RATE,
            batch_size: BATCH_SIZE,
            max_epochs: 50,
            patience: PATIENCE,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be >= 1"));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be >= 1"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(TrainError::Config("gradient clip must be > 0"));
        }
        Ok(())
    }
}

/// Mean rollout loss and, for models exposing parameters, mean squared
/// parameter error over a set of windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rollout_l2: f64,
    pub param_l2: Option<f64>,
    pub windows: usize,
    /// Windows whose rollout diverged; excluded from the means.
    pub diverged: usize,
}

pub fn evaluate<E: Executor>(model: &NdsModel, windows: &[Window], weights: &[f64], exec: &E) -> Evaluation {
    let per: Vec<Option<(f64, Option<f64>)>> = exec.map(windows.len(), |i| {
        let w = &windows[i];
        let mut tape = Tape::new(&model.params);
        let (pred, phi) = model.rollout_with(&mut tape, w, None).ok()?;
        let l = rollout_loss(&pred, w.targets(), weights).ok()?;
        let p = phi.map(|p| p.iter().zip(&w.params).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        Some((l, p))
    });
    let ok: Vec<(f64, Option<f64>)> = per.iter().flatten().copied().collect();
    let n = ok.len().max(1) as f64;
    let rollout_l2 = ok.iter().map(|r| r.0).sum::<f64>() / n;
    let param_l2 = if model.mode().estimates_params() {
        Some(ok.iter().filter_map(|r| r.1).sum::<f64>() / n)
    } else {
        None
    };
    Evaluation {
        rollout_l2,
        param_l2,
        windows: windows.len(),
        diverged: windows.len() - ok.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches; absent for epoch 0.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_param_l2: Option<f64>,
    pub rejected_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }
}

fn check_disjoint(train: &[Window], val: &[Window]) -> Result<(), TrainError> {
    let ids: BTreeSet<u64> = train.iter().map(|w| w.traj_id).collect();
    match val.iter().find(|w| ids.contains(&w.traj_id)) {
        Some(w) => Err(TrainError::Leakage(w.traj_id)),
        None => Ok(()),
    }
}

/// Adam with early stopping on validation loss. The model is left holding
/// the weights of the best validation epoch (epoch 0 being the initial
/// weights).
pub fn train<E: Executor>(
    model: &mut NdsModel,
    train_set: &[Window],
    val_set: &[Window],
    weights: &[f64],
    cfg: &TrainConfig,
    exec: &E,
) -> Result<TrainHistory, TrainError> {
    cfg.validate()?;
    check_disjoint(train_set, val_set)?;
    if val_set.is_empty() {
        return Err(TrainError::Empty("validate on"));
    }
    let initial = evaluate(model, val_set, weights, exec);
    let mut history = TrainHistory {
        epochs: vec![EpochRecord {
            epoch: 0,
            train_loss: None,
            val_loss: initial.rollout_l2,
            val_param_l2: initial.param_l2,
            rejected_batches: 0,
        }],
        best_epoch: 0,
        stopped_early: false,
    };
    if cfg.max_epochs == 0 {
        return Ok(history);
    }
    if train_set.is_empty() {
        return Err(TrainError::Empty("train on"));
    }
    let mut best = model.params.clone();
    let mut best_loss = initial.rollout_l2;
    let mut since_best = 0;
    let mut adam = Adam::new(model.params.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut failed = 0;
        let mut first_failure = None;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in &batches {
            let results = exec.map(batch.len(), |i| window_loss_grad(model, &train_set[batch[i]], weights));
            let mut grad = vec![0.0; model.params.len()];
            let mut batch_loss = 0.0;
            let mut bad = None;
            for r in results {
                match r {
                    Ok((l, g)) => {
                        batch_loss += l;
                        for (a, b) in grad.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    Err(e) => {
                        bad.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = bad {
                failed += 1;
                first_failure.get_or_insert(e);
                continue;
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grad.iter_mut() {
                *g *= inv;
            }
            if let Some(c) = cfg.grad_clip {
                let norm = crate::math::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
                if norm > c {
                    let s = c / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            if adam.step(&mut model.params, &grad).is_err() {
                failed += 1;
                continue;
            }
            loss_sum += batch_loss * inv;
            loss_count += 1;
        }
        if failed as f64 > MAX_DIVERGENT_FRACTION * batches.len() as f64 {
            model.params.copy_from_slice(&best);
            return Err(TrainError::Diverged {
                epoch,
                failed,
                batches: batches.len(),
                first: first_failure.unwrap_or(ModelError::Config("non-finite gradient")),
            });
        }
        let eval = evaluate(model, val_set, weights, exec);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            val_loss: eval.rollout_l2,
            val_param_l2: eval.param_l2,
            rejected_batches: failed,
        });
        if eval.rollout_l2 < best_loss && eval.diverged == 0 {
            best_loss = eval.rollout_l2;
            best.copy_from_slice(&model.params);
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    model.params.copy_from_slice(&best);
    Ok(history)
}

/// First `ceil(fraction * n)` items, at least one.
pub fn take_fraction<T: Clone>(items: &[T], fraction: f64) -> Vec<T> {
    let k = crate::math::ceil(fraction * items.len() as f64) as usize;
    items[..k.clamp(1.min(items.len()), items.len())].to_vec()
}

/// Divides every entry by the smallest finite entry of the column.
pub fn normalize_by_min(column: &[f64]) -> Vec<f64> {
    let min = column
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    column.iter().map(|v| v / min).collect()
}

#[cfg(test)]
mod tests;
