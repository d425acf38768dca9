//! Dataset generation, model fitting, sweeps and control evaluation.

use std::time::Instant;

use nds_core::baselines::{gbo_predict, sparse_fit, SparseModel};
use nds_core::control::{collect_dataset, evaluate_control, ControlSummary, Controller, EpisodeLog};
use nds_core::models::{Mode, NdsConfig, NdsModel, Standardization};
use nds_core::systems::{
    add_noise, generate_dataset, trajectory_rng, NoiseScales, SystemKind, Trajectory, NOISE_REFERENCE_COUNT,
};
use nds_core::training::{
    evaluate, normalize_by_min, rollout_loss, take_fraction, train, windows, Executor, TrainHistory, Window, HISTORY_LEN,
    HORIZON,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::store::Dataset;

/// First trajectory id of the validation and test splits; training ids
/// start at 0.
pub const VAL_FIRST_ID: u64 = 1 << 32;
pub const TEST_FIRST_ID: u64 = 2 << 32;
/// Stream tag for measurement noise, kept apart from trajectory streams.
const NOISE_STREAM: u64 = 3 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn clean_split(cfg: &ExperimentConfig, first_id: u64, count: usize) -> Result<Vec<Trajectory>> {
    let d = &cfg.data;
    Ok(match cfg.kind() {
        SystemKind::Cartpole => collect_dataset(d.seed, first_id, count, d.steps),
        _ => generate_dataset(&cfg.spec(), d.seed, first_id, count, d.steps, cfg.corruption.jitter)?,
    })
}

fn noise_scales(cfg: &ExperimentConfig) -> Result<NoiseScales> {
    let d = &cfg.data;
    Ok(match cfg.kind() {
        SystemKind::Cartpole => {
            NoiseScales::from_trajectories(&collect_dataset(d.seed, 0, NOISE_REFERENCE_COUNT, d.steps))
        }
        _ => NoiseScales::reference(&cfg.spec(), d.seed, d.steps)?,
    })
}

/// Train, validation and test data. Every split is corrupted the same way.
pub fn generate_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    cfg.validate()?;
    let d = &cfg.data;
    let c = &cfg.corruption;
    let scales = if c.relative_noise > 0.0 { Some(noise_scales(cfg)?) } else { None };
    let make = |first_id: u64, count: usize, split: u64| -> Result<Dataset> {
        let mut trajs = clean_split(cfg, first_id, count)?;
        if let Some(s) = &scales {
            let mut rng = trajectory_rng(d.seed, NOISE_STREAM + split);
            trajs = add_noise(&trajs, c.relative_noise, s, c.noise_mode, &mut rng)?;
        }
        Ok(Dataset {
            system: cfg.kind(),
            dt: cfg.spec().dt_output,
            seed: d.seed,
            trajectories: trajs,
        })
    };
    Ok(Splits {
        train: make(0, d.n_train, 0)?,
        val: make(VAL_FIRST_ID, d.n_val, 1)?,
        test: make(TEST_FIRST_ID, d.n_test, 2)?,
    })
}

/// Metric weights: inverse per-component spread of the full training set,
/// so every method and fraction is scored in the same units.
pub fn metric_weights(train: &[Trajectory]) -> Vec<f64> {
    Standardization::fit(train).state_scale.iter().map(|s| 1.0 / s).collect()
}

fn windows_with_stride(trajs: &[Trajectory], stride: usize) -> Vec<Window> {
    trajs
        .iter()
        .flat_map(|t| windows(t, HISTORY_LEN, HORIZON, stride))
        .collect()
}

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub system: String,
    pub fraction: f64,
    pub n_train: usize,
    pub seed: u64,
    /// Mean weighted rollout loss over test windows.
    pub test_l2: f64,
    /// Mean squared parameter error; absent for methods without estimates.
    pub param_l2: Option<f64>,
    pub epochs: usize,
    pub test_windows: usize,
    /// Test windows whose prediction diverged, excluded from the means.
    pub diverged: usize,
    #[serde(skip)]
    pub wall_time_s: f64,
}

pub enum Fitted {
    Nds(NdsModel),
    Sparse(SparseModel),
    /// Per-window methods keep no model.
    None,
}

pub struct FitOutcome {
    pub report: FitReport,
    pub history: Option<TrainHistory>,
    pub model: Fitted,
}

/// Shared, read-only inputs for every fit of one experiment.
pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub splits: &'a Splits,
    pub weights: Vec<f64>,
    pub val_windows: Vec<Window>,
    pub test_windows: Vec<Window>,
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a ExperimentConfig, splits: &'a Splits) -> Self {
        let stride = cfg.data.stride;
        Context {
            cfg,
            splits,
            weights: metric_weights(&splits.train.trajectories),
            val_windows: windows_with_stride(&splits.val.trajectories, stride),
            test_windows: windows_with_stride(&splits.test.trajectories, stride),
        }
    }

    pub fn train_subset(&self, fraction: f64) -> Vec<Trajectory> {
        take_fraction(&self.splits.train.trajectories, fraction)
    }

    /// Trains one model on the first `fraction` of the training split.
    pub fn train_nds<E: Executor>(
        &self,
        mode: Mode,
        fraction: f64,
        seed: u64,
        exec: &E,
    ) -> Result<(NdsModel, TrainHistory, usize)> {
        let subset = self.train_subset(fraction);
        let mut config = NdsConfig::new(mode, &self.cfg.spec());
        config.max_substep = self.cfg.solver.max_substep;
        let mut model = NdsModel::new(config, Standardization::fit(&subset), seed)?;
        let train_windows = windows_with_stride(&subset, self.cfg.data.stride);
        let history = train(
            &mut model,
            &train_windows,
            &self.val_windows,
            &self.weights,
            &self.cfg.train.with_seed(seed),
            exec,
        )?;
        Ok((model, history, subset.len()))
    }

    fn score(&self, per: Vec<Option<(f64, Option<f64>)>>) -> (f64, Option<f64>, usize) {
        let ok: Vec<(f64, Option<f64>)> = per.iter().flatten().copied().collect();
        let n = ok.len().max(1) as f64;
        let l2 = ok.iter().map(|r| r.0).sum::<f64>() / n;
        let p = ok.iter().map(|r| r.1).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / n);
        (l2, p, per.len() - ok.len())
    }

    /// Fits `method` and scores it on the test windows.
    pub fn fit<E: Executor>(&self, method: Method, fraction: f64, seed: u64, exec: &E) -> Result<FitOutcome> {
        let start = Instant::now();
        let spec = self.cfg.spec();
        let tw = &self.test_windows;
        let (l2, param_l2, diverged, epochs, n_train, history, model) = match method {
            Method::Nds(mode) => {
                let (model, history, n) = self.train_nds(mode, fraction, seed, exec)?;
                let e = evaluate(&model, tw, &self.weights, exec);
                let epochs = history.epochs.len() - 1;
                (e.rollout_l2, e.param_l2, e.diverged, epochs, n, Some(history), Fitted::Nds(model))
            }
            Method::Gbo => {
                let per = exec.map(tw.len(), |i| {
                    let w = &tw[i];
                    let mut rng = trajectory_rng(seed, i as u64);
                    let (pred, fit) = gbo_predict(&spec, w, &self.cfg.gbo, &mut rng).ok()?;
                    let l = rollout_loss(&pred, w.targets(), &self.weights).ok()?;
                    let p = fit.phi.iter().zip(&w.params).map(|(a, b)| (a - b) * (a - b)).sum();
                    l.is_finite().then_some((l, Some(p)))
                });
                let (l2, p, d) = self.score(per);
                (l2, p, d, 0, self.train_subset(fraction).len(), None, Fitted::None)
            }
            Method::Sparse => {
                let subset = self.train_subset(fraction);
                let model = sparse_fit(&subset, &self.cfg.sparse)?;
                let h = self.cfg.solver.max_substep;
                let per = exec.map(tw.len(), |i| {
                    let w = &tw[i];
                    let pred = model.predict(w, h).ok()?;
                    let l = rollout_loss(&pred, w.targets(), &self.weights).ok()?;
                    l.is_finite().then_some((l, None))
                });
                let (l2, _, d) = self.score(per);
                (l2, None, d, 0, subset.len(), None, Fitted::Sparse(model))
            }
        };
        if diverged == tw.len() || !l2.is_finite() || param_l2.is_some_and(|p| !p.is_finite()) {
            return Err(Error::Config(format!(
                "{} produced no finite test predictions ({diverged} of {} windows diverged)",
                method.name(),
                tw.len()
            )));
        }
        Ok(FitOutcome {
            report: FitReport {
                method: method.name().to_string(),
                system: spec.name().to_string(),
                fraction,
                n_train,
                seed,
                test_l2: l2,
                param_l2,
                epochs,
                test_windows: tw.len(),
                diverged,
                wall_time_s: start.elapsed().as_secs_f64(),
            },
            history,
            model,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub fraction: f64,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_param_l2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: String,
    pub fraction: f64,
    pub seed: u64,
    pub error: String,
}

pub struct SweepOutput {
    pub reports: Vec<FitReport>,
    pub curves: Vec<CurvePoint>,
    pub failures: Vec<Failure>,
    /// `(method, fraction, seed, model)` for every fitted model.
    pub models: Vec<(String, f64, u64, Fitted)>,
}

/// Every method at every fraction and seed. Failures are recorded and the
/// sweep continues.
pub fn run_sweep<E: Executor>(ctx: &Context, fractions: &[f64], exec: &E) -> SweepOutput {
    let mut out = SweepOutput {
        reports: Vec::new(),
        curves: Vec::new(),
        failures: Vec::new(),
        models: Vec::new(),
    };
    for method in ctx.cfg.parsed_methods() {
        for &fraction in fractions {
            for &seed in &ctx.cfg.seeds {
                match ctx.fit(method, fraction, seed, exec) {
                    Ok(o) => {
                        if let Some(h) = &o.history {
                            out.curves.extend(h.epochs.iter().map(|e| CurvePoint {
                                method: method.name().to_string(),
                                fraction,
                                seed,
                                epoch: e.epoch,
                                train_loss: e.train_loss,
                                val_loss: e.val_loss,
                                val_param_l2: e.val_param_l2,
                            }));
                        }
                        out.models.push((method.name().to_string(), fraction, seed, o.model));
                        out.reports.push(o.report);
                    }
                    Err(e) => out.failures.push(Failure {
                        method: method.name().to_string(),
                        fraction,
                        seed,
                        error: e.to_string(),
                    }),
                }
            }
        }
    }
    out
}

/// Seed-aggregated metrics with each fraction's column divided by its
/// smallest mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub fraction: f64,
    pub seeds: usize,
    pub mean_l2: f64,
    pub stderr_l2: f64,
    pub normalized_l2: f64,
    pub mean_param_l2: Option<f64>,
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn normalized_table(reports: &[FitReport]) -> Vec<TableRow> {
    let mut keys: Vec<(String, u64)> = Vec::new();
    for r in reports {
        let k = (r.method.clone(), r.fraction.to_bits());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut rows: Vec<TableRow> = keys
        .iter()
        .map(|(method, fb)| {
            let sel: Vec<&FitReport> = reports
                .iter()
                .filter(|r| &r.method == method && r.fraction.to_bits() == *fb)
                .collect();
            let l2: Vec<f64> = sel.iter().map(|r| r.test_l2).collect();
            let (mean_l2, stderr_l2) = mean_stderr(&l2);
            let mean_param_l2 = sel
                .iter()
                .map(|r| r.param_l2)
                .collect::<Option<Vec<f64>>>()
                .map(|p| mean_stderr(&p).0);
            TableRow {
                method: method.clone(),
                fraction: f64::from_bits(*fb),
                seeds: sel.len(),
                mean_l2,
                stderr_l2,
                normalized_l2: f64::NAN,
                mean_param_l2,
            }
        })
        .collect();
    let mut fractions: Vec<u64> = rows.iter().map(|r| r.fraction.to_bits()).collect();
    fractions.dedup();
    fractions.sort_unstable();
    fractions.dedup();
    for fb in fractions {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].fraction.to_bits() == fb).collect();
        let col: Vec<f64> = idx.iter().map(|&i| rows[i].mean_l2).collect();
        for (&i, v) in idx.iter().zip(normalize_by_min(&col)) {
            rows[i].normalized_l2 = v;
        }
    }
    rows
}

/// One evaluated controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub controller: String,
    /// Training seed for learned models.
    pub seed: Option<u64>,
    pub episodes: usize,
    pub mean_return: f64,
    pub stderr_return: f64,
}

pub struct ControlOutput {
    pub rows: Vec<ControlRow>,
    /// Episode logs keyed like the rows.
    pub logs: Vec<(String, Vec<EpisodeLog>)>,
    pub failures: Vec<Failure>,
    pub models: Vec<(String, u64, Fitted)>,
}

fn control_row(name: &str, seed: Option<u64>, s: &ControlSummary) -> ControlRow {
    ControlRow {
        controller: name.to_string(),
        seed,
        episodes: s.returns.len(),
        mean_return: s.mean,
        stderr_return: s.stderr,
    }
}

/// Trains each learned method on the full training split and evaluates
/// MPC on the same episode draws, plus the random and oracle references.
pub fn run_control<E: Executor>(ctx: &Context, exec: &E) -> Result<ControlOutput> {
    let cfg = ctx.cfg;
    if cfg.kind() != SystemKind::Cartpole {
        return Err(Error::Config("control experiments need system = \"cartpole\"".into()));
    }
    let mpc = cfg.control.mpc();
    let (episodes, eseed) = (cfg.control.episodes, cfg.control.seed);
    let mut out = ControlOutput {
        rows: Vec::new(),
        logs: Vec::new(),
        failures: Vec::new(),
        models: Vec::new(),
    };
    if cfg.control.references {
        for (name, c) in [("random", Controller::Random), ("oracle", Controller::Oracle)] {
            let (s, logs) = evaluate_control(c, episodes, eseed, &mpc, exec)?;
            out.rows.push(control_row(name, None, &s));
            out.logs.push((name.to_string(), logs));
        }
    }
    for method in cfg.parsed_methods() {
        for &seed in &cfg.seeds {
            let fitted = match method {
                Method::Nds(mode) => ctx.train_nds(mode, 1.0, seed, exec).map(|(m, _, _)| Fitted::Nds(m)),
                Method::Sparse => sparse_fit(&ctx.splits.train.trajectories, &cfg.sparse)
                    .map(Fitted::Sparse)
                    .map_err(Error::from),
                Method::Gbo => Err(Error::Config("gbo has no reusable model for planning".into())),
            };
            let result = fitted.and_then(|f| {
                let dynamics: &dyn nds_core::control::Dynamics = match &f {
                    Fitted::Nds(m) => m,
                    Fitted::Sparse(m) => m,
                    Fitted::None => unreachable!("planning methods keep a model"),
                };
                let r = evaluate_control(Controller::Model(dynamics), episodes, eseed, &mpc, exec)?;
                Ok((r, f))
            });
            match result {
                Ok(((s, logs), f)) => {
                    out.rows.push(control_row(method.name(), Some(seed), &s));
                    out.logs.push((format!("{}_s{seed}", method.name()), logs));
                    out.models.push((method.name().to_string(), seed, f));
                }
                Err(e) => out.failures.push(Failure {
                    method: method.name().to_string(),
                    fraction: 1.0,
                    seed,
                    error: e.to_string(),
                }),
            }
        }
    }
    Ok(out)
}
