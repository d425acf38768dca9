//! TOML experiment configuration.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nds_core::baselines::{GboConfig, SparseConfig};
use nds_core::control::MpcConfig;
use nds_core::models::Mode;
use nds_core::odeint::TRAINING_MAX_SUBSTEP;
use nds_core::systems::{CorruptionConfig, SystemKind, SystemSpec};
use nds_core::training::{TrainConfig, BATCH_SIZE, HISTORY_LEN, HORIZON, LEARNING_RATE, PATIENCE, WINDOW_STRIDE};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// A fitted or per-window method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Nds(Mode),
    Gbo,
    Sparse,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "gbo" => Some(Method::Gbo),
            "sr" => Some(Method::Sparse),
            _ => Mode::from_name(s).map(Method::Nds),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Nds(m) => m.name(),
            Method::Gbo => "gbo",
            Method::Sparse => "sr",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Samples per trajectory.
    pub steps: usize,
    pub seed: u64,
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 1000,
            n_val: 1000,
            n_test: 2000,
            steps: 64,
            seed: 0,
            stride: WINDOW_STRIDE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            learning_rate: LEARNING_RATE,
            batch_size: BATCH_SIZE,
            max_epochs: 50,
            patience: PATIENCE,
            grad_clip: None,
        }
    }
}

impl TrainSettings {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            grad_clip: self.grad_clip,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Largest RK4 substep inside learned models, in seconds.
    pub max_substep: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_substep: TRAINING_MAX_SUBSTEP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSettings {
    pub episodes: usize,
    pub seed: u64,
    pub n_samples: usize,
    pub horizon: usize,
    pub warmup: usize,
    /// Also evaluate the random policy and exact-dynamics MPC.
    pub references: bool,
}

impl Default for ControlSettings {
    fn default() -> Self {
        let m = MpcConfig::default();
        ControlSettings {
            episodes: 20,
            seed: 0,
            n_samples: m.n_samples,
            horizon: m.horizon,
            warmup: m.warmup,
            references: true,
        }
    }
}

impl ControlSettings {
    pub fn mpc(&self) -> MpcConfig {
        MpcConfig {
            n_samples: self.n_samples,
            horizon: self.horizon,
            warmup: self.warmup,
        }
    }
}

fn default_methods() -> Vec<String> {
    ["full", "node", "fc"].map(String::from).to_vec()
}

fn default_fractions() -> Vec<f64> {
    vec![1.0, 0.25, 0.05, 0.01]
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    pub output: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub corruption: CorruptionConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub gbo: GboConfig,
    #[serde(default)]
    pub sparse: SparseConfig,
    #[serde(default)]
    pub control: ControlSettings,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    /// Minimal configuration with defaults everywhere else.
    pub fn new(system: SystemKind, output: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            system: system.name().to_string(),
            output: output.into(),
            methods: default_methods(),
            fractions: default_fractions(),
            seeds: default_seeds(),
            data: DataConfig::default(),
            corruption: CorruptionConfig::default(),
            train: TrainSettings::default(),
            solver: SolverSettings::default(),
            gbo: GboConfig::default(),
            sparse: SparseConfig::default(),
            control: ControlSettings::default(),
        }
    }

    /// Parses `text`, applies `key.path=value` overrides (values parsed as
    /// TOML, bare words as strings) and validates the result.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).at(path)?, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn kind(&self) -> SystemKind {
        SystemKind::from_name(&self.system).expect("validated")
    }

    pub fn spec(&self) -> SystemSpec {
        SystemSpec::new(self.kind())
    }

    pub fn parsed_methods(&self) -> Vec<Method> {
        self.methods.iter().map(|m| Method::parse(m).expect("validated")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let kind = SystemKind::from_name(&self.system).map_err(|e| bad(e.to_string()))?;
        let spec = SystemSpec::new(kind);
        if self.methods.is_empty() {
            return Err(bad("methods must not be empty"));
        }
        let mut seen = HashSet::new();
        for m in &self.methods {
            let parsed = Method::parse(m).ok_or_else(|| {
                bad(format!("unknown method {m:?}; expected one of full, partial, nds0, node, fc, gbo, sr"))
            })?;
            if !seen.insert(parsed) {
                return Err(bad(format!("method {m:?} listed twice")));
            }
        }
        if self.fractions.is_empty() || self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(bad("fractions must be non-empty and lie in (0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds must not be empty"));
        }
        let d = &self.data;
        if d.n_train == 0 || d.n_val == 0 || d.n_test == 0 {
            return Err(bad("every split needs at least one trajectory"));
        }
        if d.steps < HISTORY_LEN + HORIZON {
            return Err(bad(format!("data.steps must be >= {}", HISTORY_LEN + HORIZON)));
        }
        if d.stride == 0 {
            return Err(bad("data.stride must be >= 1"));
        }
        let c = &self.corruption;
        if !(c.relative_noise >= 0.0) || !(c.jitter >= 0.0) {
            return Err(bad("noise and jitter must be >= 0"));
        }
        if c.jitter > 0.5 * spec.dt_output {
            return Err(bad(format!("jitter must not exceed half the sample spacing ({} s)", 0.5 * spec.dt_output)));
        }
        if kind == SystemKind::Cartpole && c.jitter > 0.0 {
            return Err(bad("cartpole data comes from the fixed-step environment and cannot be jittered"));
        }
        self.train.with_seed(0).validate().map_err(|e| bad(e.to_string()))?;
        if !(self.solver.max_substep > 0.0) {
            return Err(bad("solver.max_substep must be > 0"));
        }
        self.gbo.validate().map_err(|e| bad(e.to_string()))?;
        if !(self.sparse.threshold >= 0.0) || self.sparse.degree == 0 {
            return Err(bad("sparse needs degree >= 1 and threshold >= 0"));
        }
        self.control.mpc().validate().map_err(|e| bad(e.to_string()))?;
        if self.control.episodes == 0 {
            return Err(bad("control.episodes must be >= 1"));
        }
        Ok(())
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| bad(format!("override {spec:?} is not key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| bad(format!("override {key:?}: {p} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
