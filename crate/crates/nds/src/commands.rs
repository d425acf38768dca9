//! The subcommands, callable without the CLI.

use std::path::{Path, PathBuf};

use nds_core::baselines::{gbo_multistart, sparse_fit, GboProblem};
use nds_core::systems::trajectory_rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{save_model, save_sparse};
use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, IoContext, Result};
use crate::exec::Parallel;
use crate::experiment::{
    generate_splits, normalized_table, run_control, run_sweep, Context, Failure, Fitted, FitReport, SweepOutput,
};
use crate::manifest::{
    finish_run, load_dataset, prepare_run_dir, write_dataset, write_json, write_jsonl, write_rows, DatasetManifest,
    RunManifest,
};

pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunSummary {
    pub fn failures(&self) -> &[Failure] {
        &self.manifest.failures
    }
}

pub fn cmd_generate(cfg: &ExperimentConfig, force: bool) -> Result<DatasetManifest> {
    let splits = generate_splits(cfg)?;
    write_dataset(cfg, &splits, force)
}

#[derive(Serialize)]
struct Timing<'a> {
    method: &'a str,
    fraction: f64,
    seed: u64,
    wall_time_s: f64,
}

fn model_file(method: &str, fraction: f64, seed: u64) -> String {
    format!("{method}_f{fraction}_s{seed}.json")
}

fn write_sweep(dir: &Path, cfg: &ExperimentConfig, out: &SweepOutput) -> Result<()> {
    write_rows(&dir.join("metrics.csv"), &out.reports)?;
    let timing: Vec<Timing> = out
        .reports
        .iter()
        .map(|r| Timing {
            method: &r.method,
            fraction: r.fraction,
            seed: r.seed,
            wall_time_s: r.wall_time_s,
        })
        .collect();
    write_rows(&dir.join("timing.csv"), &timing)?;
    write_rows(&dir.join("loss_curves.csv"), &out.curves)?;
    write_rows(&dir.join("table.csv"), &normalized_table(&out.reports))?;
    let models = dir.join("models");
    std::fs::create_dir_all(&models).at(&models)?;
    for (method, fraction, seed, m) in &out.models {
        let path = models.join(model_file(method, *fraction, *seed));
        match m {
            Fitted::Nds(m) => save_model(&path, m)?,
            Fitted::Sparse(m) => save_sparse(&path, &cfg.system, m)?,
            Fitted::None => {}
        }
    }
    Ok(())
}

fn run_fits(cfg: &ExperimentConfig, command: &str, fractions: &[f64], force: bool, jobs: usize) -> Result<RunSummary> {
    let (splits, data) = load_dataset(cfg)?;
    let dir = prepare_run_dir(cfg, command, force)?;
    let exec = Parallel::new(jobs);
    let ctx = Context::new(cfg, &splits);
    let out = run_sweep(&ctx, fractions, &exec);
    write_sweep(&dir, cfg, &out)?;
    let manifest = finish_run(&dir, cfg, command, Some(&data), out.failures)?;
    Ok(RunSummary { dir, manifest })
}

/// Every method on the full training split, once per seed.
pub fn cmd_train(cfg: &ExperimentConfig, force: bool, jobs: usize) -> Result<RunSummary> {
    run_fits(cfg, "train", &[1.0], force, jobs)
}

/// Every method at every configured fraction and seed.
pub fn cmd_sweep(cfg: &ExperimentConfig, force: bool, jobs: usize) -> Result<RunSummary> {
    run_fits(cfg, "sweep", &cfg.fractions, force, jobs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub method: String,
    pub trajectory: Option<u64>,
    pub param_names: Vec<String>,
    pub phi_hat: Vec<f64>,
    pub phi_true: Vec<f64>,
    pub residual_norm: Option<f64>,
    pub converged: Option<bool>,
    /// Identified equations, one per state component.
    pub equations: Vec<String>,
}

/// GBO on one test trajectory, or sparse regression on the training split.
pub fn cmd_identify(
    cfg: &ExperimentConfig,
    method: Method,
    trajectory: Option<u64>,
    force: bool,
) -> Result<(Identification, RunSummary)> {
    let (splits, data) = load_dataset(cfg)?;
    let spec = cfg.spec();
    let id = match method {
        Method::Gbo => {
            let tr = match trajectory {
                Some(t) => splits.test.trajectories.iter().find(|x| x.id == t),
                None => splits.test.trajectories.first(),
            }
            .ok_or_else(|| Error::Config(format!("no test trajectory with id {trajectory:?}")))?;
            let controls: &[Vec<f64>] = if spec.control_dim == 0 { &[] } else { &tr.controls };
            let problem = GboProblem {
                spec: &spec,
                times: &tr.times,
                states: &tr.states,
                controls,
                phi0: spec.param_ranges.iter().map(|r| r.mid()).collect(),
                config: cfg.gbo.clone(),
            };
            let fit = gbo_multistart(&problem, &mut trajectory_rng(cfg.seeds[0], tr.id))?;
            Identification {
                method: "gbo".into(),
                trajectory: Some(tr.id),
                param_names: spec.param_names.iter().map(|s| s.to_string()).collect(),
                phi_hat: fit.phi,
                phi_true: tr.params.clone(),
                residual_norm: Some(fit.residual_norm),
                converged: Some(fit.converged),
                equations: Vec::new(),
            }
        }
        Method::Sparse => {
            let model = sparse_fit(&splits.train.trajectories, &cfg.sparse)?;
            let names: Vec<&str> = spec.state_names.iter().chain(&spec.control_names).copied().collect();
            let equations = (0..spec.state_dim)
                .map(|j| {
                    let terms: Vec<String> = model
                        .support(j)
                        .into_iter()
                        .map(|i| format!("{:+} {}", model.coefficients[j][i], model.term_name(i, &names)))
                        .collect();
                    let rhs = if terms.is_empty() { "0".to_string() } else { terms.join(" ") };
                    format!("d{}/dt = {rhs}", spec.state_names[j])
                })
                .collect();
            Identification {
                method: "sr".into(),
                trajectory: None,
                param_names: Vec::new(),
                phi_hat: Vec::new(),
                phi_true: Vec::new(),
                residual_norm: None,
                converged: None,
                equations,
            }
        }
        Method::Nds(_) => return Err(Error::Config("identify supports --method gbo or sr".into())),
    };
    let dir = prepare_run_dir(cfg, "identify", force)?;
    write_json(&dir.join("identify.json"), &id)?;
    let manifest = finish_run(&dir, cfg, "identify", Some(&data), Vec::new())?;
    Ok((id, RunSummary { dir, manifest }))
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    episode: usize,
    step: usize,
    state: &'a [f64; 4],
    action: f64,
    reward: f64,
}

/// MPC evaluation of every method plus the random and oracle references.
pub fn cmd_control(cfg: &ExperimentConfig, force: bool, jobs: usize) -> Result<RunSummary> {
    let (splits, data) = load_dataset(cfg)?;
    let dir = prepare_run_dir(cfg, "control", force)?;
    let exec = Parallel::new(jobs);
    let ctx = Context::new(cfg, &splits);
    let out = run_control(&ctx, &exec)?;
    write_rows(&dir.join("control.csv"), &out.rows)?;
    let ep = dir.join("episodes");
    std::fs::create_dir_all(&ep).at(&ep)?;
    for (name, logs) in &out.logs {
        let lines = logs.iter().flat_map(|l| {
            l.steps.iter().map(move |s| EpisodeLine {
                episode: l.episode,
                step: s.step,
                state: &s.state,
                action: s.action,
                reward: s.reward,
            })
        });
        write_jsonl(&ep.join(format!("{name}.jsonl")), lines)?;
    }
    let models = dir.join("models");
    std::fs::create_dir_all(&models).at(&models)?;
    for (method, seed, m) in &out.models {
        let path = models.join(model_file(method, 1.0, *seed));
        match m {
            Fitted::Nds(m) => save_model(&path, m)?,
            Fitted::Sparse(m) => save_sparse(&path, &cfg.system, m)?,
            Fitted::None => {}
        }
    }
    let manifest = finish_run(&dir, cfg, "control", Some(&data), out.failures)?;
    Ok(RunSummary { dir, manifest })
}

/// Rebuilds the normalized table from one or more `metrics.csv` files
/// (plot-ready CSV) into `out`.
pub fn cmd_report(metrics: &[PathBuf], out: &Path) -> Result<Vec<crate::experiment::TableRow>> {
    let mut reports: Vec<FitReport> = Vec::new();
    for m in metrics {
        reports.extend(crate::manifest::read_rows::<FitReport>(m)?);
    }
    if reports.is_empty() {
        return Err(Error::Config("no metrics rows to report".into()));
    }
    let table = normalized_table(&reports);
    write_rows(out, &table)?;
    Ok(table)
}
