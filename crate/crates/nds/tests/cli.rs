use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nds::config::{ExperimentConfig, Method};
use nds::exec::Parallel;
use nds::experiment::{generate_splits, Context, FitReport};
use nds::manifest::{read_rows, read_run_manifest};
use nds::Error;
use nds_core::models::Mode;
use nds_core::training::Sequential;

fn nds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nds")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let out = dir.join("out");
    let path = dir.join("exp.toml");
    fs::write(&path, format!("output = {:?}\n{body}", out.display().to_string())).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"
system = "lorenz"
methods = ["nds0", "fc", "sr"]
fractions = [1.0, 0.25, 0.05, 0.01]
seeds = [0, 1, 2, 3, 4]
[data]
n_train = 40
n_val = 8
n_test = 8
steps = 48
[train]
max_epochs = 1
batch_size = 16
"#;

#[test]
fn help_lists_every_subcommand() {
    let out = nds(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["generate", "train", "sweep", "identify", "control", "report"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let out = nds(&["sweep", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--config", "--set", "--output", "--force", "--jobs"] {
        assert!(text.contains(flag), "{flag} missing");
    }
}

#[test]
fn generate_is_reproducible_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "system = \"lorenz\"\n[data]\nn_train = 100\nn_val = 5\nn_test = 5\n");
    let first = nds(&["generate", "-c", &cfg]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let m1 = fs::read_to_string(dir.path().join("out/data/manifest.json")).unwrap();
    assert!(m1.contains("\"trajectories\": 100"));

    let again = nds(&["generate", "-c", &cfg]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));

    assert!(nds(&["generate", "-c", &cfg, "--force"]).status.success());
    let m2 = fs::read_to_string(dir.path().join("out/data/manifest.json")).unwrap();
    assert_eq!(m1, m2);

    let c = ExperimentConfig::load(Path::new(&cfg), &[]).unwrap();
    let (splits, _) = nds::manifest::load_dataset(&c).unwrap();
    let spec = c.spec();
    for tr in &splits.train.trajectories {
        for (v, r) in tr.params.iter().zip(&spec.param_ranges) {
            assert!(r.contains(*v));
        }
    }
}

#[test]
fn stale_datasets_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert!(nds(&["generate", "-c", &cfg]).status.success());
    let store = dir.path().join("out/data/val.ndstraj");
    let mut bytes = fs::read(&store).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&store, bytes).unwrap();
    let out = nds(&["train", "-c", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match its manifest"));

    // changing the data settings also invalidates the dataset
    let c = ExperimentConfig::load(Path::new(&cfg), &["data.seed=9".into()]).unwrap();
    assert!(matches!(nds::manifest::load_dataset(&c), Err(Error::Config(_))));
    let missing = ExperimentConfig::load(Path::new(&cfg), &[format!("output={:?}", dir.path().join("none").display().to_string())]).unwrap();
    assert!(matches!(nds::manifest::load_dataset(&missing), Err(Error::MissingDataset(_))));
}

#[test]
fn sweep_emits_the_full_grid_and_reruns_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert!(nds(&["generate", "-c", &cfg]).status.success());
    let out = nds(&["sweep", "-c", &cfg, "-j", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = dir.path().join("out/sweep");
    let rows: Vec<FitReport> = read_rows(&sweep.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 4 * 3 * 5);
    assert!(rows.iter().all(|r| r.test_l2.is_finite()));
    assert!(rows.iter().filter(|r| r.method == "fc").all(|r| r.param_l2.is_none()));
    assert!(rows.iter().filter(|r| r.method == "nds0").all(|r| r.param_l2.is_some()));
    assert_eq!(rows.iter().find(|r| r.fraction == 1.0).unwrap().n_train, 40);
    assert_eq!(rows.iter().find(|r| r.fraction == 0.01).unwrap().n_train, 1);

    let table = fs::read_to_string(sweep.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4 * 3);

    let before = read_run_manifest(&sweep).unwrap();
    assert!(!nds(&["sweep", "-c", &cfg]).status.success());
    let rerun = nds(&["sweep", "-c", &cfg, "--force", "-j", "1"]);
    assert!(rerun.status.success());
    let after = read_run_manifest(&sweep).unwrap();
    assert_eq!(before.outputs, after.outputs);
    assert!(after.outputs.contains_key("metrics.csv"));
    assert!(after.outputs.contains_key("models/nds0_f1_s0.json"));

    let report = dir.path().join("report.csv");
    let r = nds(&["report", sweep.join("metrics.csv").to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(r.status.success());
    assert_eq!(fs::read_to_string(report).unwrap(), table);
}

#[test]
fn identify_prints_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "system = \"ballistic\"\n[data]\nn_train = 4\nn_val = 2\nn_test = 2\nsteps = 48\n",
    );
    assert!(nds(&["generate", "-c", &cfg]).status.success());
    let out = nds(&["identify", "-c", &cfg, "--method", "gbo"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.starts_with("v_t:")).unwrap();
    let nums: Vec<f64> = line.split_whitespace().filter_map(|w| w.parse().ok()).collect();
    assert!((nums[0] - nums[1]).abs() < 0.01 * nums[1], "{line}");
    assert!(text.contains("residual norm"));

    let out = nds(&["identify", "-c", &cfg, "--method", "sr", "--force"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("dx/dt ="));
    assert!(!nds(&["identify", "-c", &cfg, "--method", "full", "--force"]).status.success());
}

#[test]
fn control_run_writes_episode_logs() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
system = "cartpole"
methods = ["nds0", "sr"]
seeds = [0]
[data]
n_train = 30
n_val = 5
n_test = 5
steps = 48
[train]
max_epochs = 1
[control]
episodes = 2
n_samples = 16
horizon = 4
"#;
    let cfg = write_config(dir.path(), body);
    assert!(nds(&["generate", "-c", &cfg]).status.success());
    let out = nds(&["control", "-c", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("out/control");
    let csv = fs::read_to_string(run.join("control.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    for name in ["random", "oracle", "nds0_s0", "sr_s0"] {
        let log = fs::read_to_string(run.join(format!("episodes/{name}.jsonl"))).unwrap();
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        for key in ["episode", "step", "state", "action", "reward"] {
            assert!(first.get(key).is_some(), "{name} lacks {key}");
        }
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let mut cfg = ExperimentConfig::from_toml(&format!("output = \"unused\"\n{SMALL}"), &[]).unwrap();
    cfg.data.n_train = 16;
    let splits = generate_splits(&cfg).unwrap();
    let ctx = Context::new(&cfg, &splits);
    let m = Method::Nds(Mode::Full);
    let a = ctx.fit(m, 1.0, 3, &Sequential).unwrap().report;
    let b = ctx.fit(m, 1.0, 3, &Parallel::new(3)).unwrap().report;
    assert_eq!((a.test_l2, a.param_l2), (b.test_l2, b.param_l2));
}
