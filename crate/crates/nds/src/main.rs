use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use nds::commands::{cmd_control, cmd_generate, cmd_identify, cmd_report, cmd_sweep, cmd_train, RunSummary};
use nds::config::{ExperimentConfig, Method};
use nds::experiment::normalized_table;

/// Gray-box neural dynamical systems: data generation, training, sweeps,
/// system identification and model-predictive control.
#[derive(Parser)]
#[command(name = "nds", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set train.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `output`).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Replace existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct Jobs {
    /// Worker threads; 0 uses every core.
    #[arg(short, long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test trajectory stores and their manifest.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train every configured method on the full training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Train every method at every dataset fraction and seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Fit per-trajectory parameters (gbo) or a sparse polynomial model (sr).
    Identify {
        #[command(flatten)]
        common: Common,
        /// `gbo` or `sr`.
        #[arg(short, long)]
        method: String,
        /// Test trajectory id for gbo; defaults to the first.
        #[arg(short, long)]
        trajectory: Option<u64>,
    },
    /// Evaluate model-predictive control on the randomized cartpole.
    Control {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Rebuild the normalized comparison table from metrics files.
    Report {
        /// One or more `metrics.csv` files.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Output CSV.
        #[arg(long, default_value = "table.csv")]
        out: PathBuf,
    },
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut overrides = common.set.clone();
    if let Some(o) = &common.output {
        overrides.push(format!("output={}", toml::Value::String(o.display().to_string())));
    }
    ExperimentConfig::load(&common.config, &overrides).with_context(|| format!("loading {}", common.config.display()))
}

fn finish(run: RunSummary) -> ExitCode {
    println!("wrote {}", run.dir.display());
    if run.failures().is_empty() {
        return ExitCode::SUCCESS;
    }
    for f in run.failures() {
        eprintln!("failed: {} fraction {} seed {}: {}", f.method, f.fraction, f.seed, f.error);
    }
    ExitCode::FAILURE
}

fn print_table(run: &RunSummary) -> anyhow::Result<()> {
    let metrics = nds::manifest::read_rows(&run.dir.join("metrics.csv"))?;
    println!("{:<8} {:>8} {:>14} {:>12} {:>10}", "method", "fraction", "mean_l2", "stderr", "normalized");
    for r in normalized_table(&metrics) {
        println!(
            "{:<8} {:>8} {:>14.6e} {:>12.4e} {:>10.4}",
            r.method, r.fraction, r.mean_l2, r.stderr_l2, r.normalized_l2
        );
    }
    Ok(())
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    Ok(match cli.command {
        Command::Generate { common } => {
            let cfg = load(&common)?;
            let m = cmd_generate(&cfg, common.force)?;
            for (name, e) in &m.splits {
                println!("{name}: {} trajectories, sha256 {}", e.trajectories, e.sha256);
            }
            ExitCode::SUCCESS
        }
        Command::Train { common, jobs } => {
            let run = cmd_train(&load(&common)?, common.force, jobs.jobs)?;
            print_table(&run)?;
            finish(run)
        }
        Command::Sweep { common, jobs } => {
            let run = cmd_sweep(&load(&common)?, common.force, jobs.jobs)?;
            print_table(&run)?;
            finish(run)
        }
        Command::Identify {
            common,
            method,
            trajectory,
        } => {
            let cfg = load(&common)?;
            let m = Method::parse(&method).with_context(|| format!("unknown method {method:?}"))?;
            let (id, run) = cmd_identify(&cfg, m, trajectory, common.force)?;
            for ((name, hat), truth) in id.param_names.iter().zip(&id.phi_hat).zip(&id.phi_true) {
                println!("{name}: estimated {hat:.6} true {truth:.6}");
            }
            if let Some(r) = id.residual_norm {
                println!("residual norm {r:.6e}");
            }
            for e in &id.equations {
                println!("{e}");
            }
            finish(run)
        }
        Command::Control { common, jobs } => {
            let run = cmd_control(&load(&common)?, common.force, jobs.jobs)?;
            let rows: Vec<nds::experiment::ControlRow> = nds::manifest::read_rows(&run.dir.join("control.csv"))?;
            for r in &rows {
                let seed = r.seed.map_or(String::from("-"), |s| s.to_string());
                println!("{:<8} seed {:>3}: {:.2} ± {:.2}", r.controller, seed, r.mean_return, r.stderr_return);
            }
            finish(run)
        }
        Command::Report { metrics, out } => {
            let table = cmd_report(&metrics, &out)?;
            println!("wrote {} rows to {}", table.len(), out.display());
            ExitCode::SUCCESS
        }
    })
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
