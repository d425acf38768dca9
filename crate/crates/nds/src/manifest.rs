//! Dataset and run manifests, output directories and tabular writers.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nds_core::systems::CorruptionConfig;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, ExperimentConfig};
use crate::error::{format_err, Error, IoContext, Result};
use crate::experiment::{Failure, Splits};
use crate::store::{read_store, sidecar_path, store_hash, write_csv, write_store, Dataset};

pub const TOOL: &str = concat!("nds ", env!("CARGO_PKG_VERSION"));
pub const SPLITS: [&str; 3] = ["train", "val", "test"];
/// Files whose content legitimately differs between identical runs.
pub const NONDETERMINISTIC: [&str; 2] = ["manifest.json", "timing.csv"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub file: String,
    pub trajectories: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub tool: String,
    pub system: String,
    pub data: DataConfig,
    pub corruption: CorruptionConfig,
    pub splits: BTreeMap<String, DatasetEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub config: ExperimentConfig,
    /// Split name to dataset hash.
    pub datasets: BTreeMap<String, String>,
    /// Relative path to SHA-256 for every deterministic output.
    pub outputs: BTreeMap<String, String>,
    pub failures: Vec<Failure>,
}

pub fn data_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.join("data")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&fs::read(path).at(path)?).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).at(path)
}

/// Writes the three splits with CSV exports and the dataset manifest.
pub fn write_dataset(cfg: &ExperimentConfig, splits: &Splits, force: bool) -> Result<DatasetManifest> {
    let dir = data_dir(cfg);
    let mpath = dir.join("manifest.json");
    if mpath.exists() && !force {
        return Err(Error::Exists(dir));
    }
    fs::create_dir_all(&dir).at(&dir)?;
    let mut entries = BTreeMap::new();
    for (name, ds) in SPLITS.iter().zip([&splits.train, &splits.val, &splits.test]) {
        let file = format!("{name}.ndstraj");
        let path = dir.join(&file);
        write_store(&path, ds)?;
        write_csv(&dir.join(format!("{name}.csv")), ds)?;
        entries.insert(
            name.to_string(),
            DatasetEntry {
                file,
                trajectories: ds.trajectories.len(),
                sha256: store_hash(&path)?,
            },
        );
    }
    let m = DatasetManifest {
        tool: TOOL.to_string(),
        system: cfg.system.clone(),
        data: cfg.data.clone(),
        corruption: cfg.corruption.clone(),
        splits: entries,
    };
    write_json(&mpath, &m)?;
    Ok(m)
}

/// Reads the splits after checking they were generated from this
/// configuration and are unchanged since.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Splits, DatasetManifest)> {
    let dir = data_dir(cfg);
    let mpath = dir.join("manifest.json");
    if !mpath.exists() {
        return Err(Error::MissingDataset(mpath));
    }
    let m: DatasetManifest = read_json(&mpath)?;
    if m.system != cfg.system || m.data != cfg.data || m.corruption != cfg.corruption {
        return Err(Error::Config(format!(
            "dataset in {} was generated with different system, data or corruption settings; rerun generate with --force",
            dir.display()
        )));
    }
    let mut sets: Vec<Dataset> = Vec::new();
    for name in SPLITS {
        let e = m
            .splits
            .get(name)
            .ok_or_else(|| format_err(&mpath, format!("manifest lists no {name} split")))?;
        let path = dir.join(&e.file);
        for p in [&path, &sidecar_path(&path)] {
            if !p.exists() {
                return Err(Error::MissingDataset(p.to_path_buf()));
            }
        }
        let found = store_hash(&path)?;
        if found != e.sha256 {
            return Err(Error::HashMismatch {
                path,
                expected: e.sha256.clone(),
                found,
            });
        }
        sets.push(read_store(&path)?);
    }
    let test = sets.pop().expect("three splits");
    let val = sets.pop().expect("three splits");
    let train = sets.pop().expect("three splits");
    Ok((Splits { train, val, test }, m))
}

/// Fresh output directory for `command`; refuses to replace an existing one
/// unless `force`.
pub fn prepare_run_dir(cfg: &ExperimentConfig, command: &str, force: bool) -> Result<PathBuf> {
    let dir = cfg.output.join(command);
    if dir.exists() {
        if !force {
            return Err(Error::Exists(dir));
        }
        fs::remove_dir_all(&dir).at(&dir)?;
    }
    fs::create_dir_all(&dir).at(&dir)?;
    Ok(dir)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .at(dir)?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("inside root").to_path_buf());
        }
    }
    Ok(())
}

/// Hashes every deterministic file in `dir` and writes `manifest.json`.
pub fn finish_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    command: &str,
    datasets: Option<&DatasetManifest>,
    failures: Vec<Failure>,
) -> Result<RunManifest> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut outputs = BTreeMap::new();
    for rel in files {
        let name = rel.to_string_lossy().replace('\\', "/");
        if NONDETERMINISTIC.contains(&name.as_str()) {
            continue;
        }
        outputs.insert(name, crate::store::content_hash(&[dir.join(&rel)])?);
    }
    let m = RunManifest {
        tool: TOOL.to_string(),
        command: command.to_string(),
        config: cfg.clone(),
        datasets: datasets
            .map(|d| d.splits.iter().map(|(k, v)| (k.clone(), v.sha256.clone())).collect())
            .unwrap_or_default(),
        outputs,
        failures,
    };
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(m)
}

pub fn read_run_manifest(dir: &Path) -> Result<RunManifest> {
    read_json(&dir.join("manifest.json"))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).at(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(|e| format_err(path, e.to_string()))?;
    }
    w.flush().at(path)
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| format_err(path, e.to_string()))
}

/// JSON-lines writer for episode logs.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).at(path)?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, &r).map_err(|e| format_err(path, e.to_string()))?;
        w.write_all(b"\n").at(path)?;
    }
    w.flush().at(path)
}
