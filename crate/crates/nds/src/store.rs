//! Trajectory datasets on disk: a compact binary store with a JSON sidecar
//! for the hidden parameters, plus a CSV export.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nds_core::systems::{SystemKind, SystemSpec, Trajectory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{format_err, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"NDSTRAJ1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub system: SystemKind,
    pub dt: f64,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    system: String,
    params: BTreeMap<u64, Vec<f64>>,
}

/// `train.ndstraj` -> `train.params.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("params.json")
}

fn encode(ds: &Dataset) -> Vec<u8> {
    let spec = SystemSpec::new(ds.system);
    let name = spec.name().as_bytes();
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&(name.len() as u32).to_le_bytes());
    b.extend_from_slice(name);
    b.extend_from_slice(&ds.dt.to_le_bytes());
    b.extend_from_slice(&ds.seed.to_le_bytes());
    b.extend_from_slice(&(ds.trajectories.len() as u64).to_le_bytes());
    for d in [spec.state_dim, spec.control_dim] {
        b.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for tr in &ds.trajectories {
        b.extend_from_slice(&tr.id.to_le_bytes());
        b.extend_from_slice(&tr.seed.to_le_bytes());
        b.extend_from_slice(&(tr.len() as u64).to_le_bytes());
        for k in 0..tr.len() {
            b.extend_from_slice(&tr.times[k].to_le_bytes());
            for v in tr.states[k].iter().chain(&tr.controls[k]) {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    b
}

fn check_shapes(ds: &Dataset, path: &Path) -> Result<()> {
    let spec = SystemSpec::new(ds.system);
    for tr in &ds.trajectories {
        let ok = tr.times.len() == tr.states.len()
            && tr.controls.len() == tr.states.len()
            && tr.states.iter().all(|s| s.len() == spec.state_dim)
            && tr.controls.iter().all(|u| u.len() == spec.control_dim)
            && tr.params.len() == spec.param_dim();
        if !ok {
            return Err(format_err(path, format!("trajectory {} does not match the {} layout", tr.id, spec.name())));
        }
    }
    Ok(())
}

/// Writes the binary store and its parameter sidecar.
pub fn write_store(path: &Path, ds: &Dataset) -> Result<()> {
    check_shapes(ds, path)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    fs::write(path, encode(ds)).at(path)?;
    let side = Sidecar {
        system: ds.system.name().to_string(),
        params: ds.trajectories.iter().map(|t| (t.id, t.params.clone())).collect(),
    };
    let sp = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    fs::write(&sp, text).at(&sp)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(self.path, "truncated trajectory store"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_store(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).at(path)?;
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return Err(format_err(path, "not a trajectory store (bad magic)"));
    }
    let name_len = r.u32()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| format_err(path, "system name is not UTF-8"))?
        .to_string();
    let system = SystemKind::from_name(&name)?;
    let spec = SystemSpec::new(system);
    let dt = r.f64()?;
    let seed = r.u64()?;
    let count = r.u64()? as usize;
    let (n, m) = (r.u32()? as usize, r.u32()? as usize);
    if n != spec.state_dim || m != spec.control_dim {
        return Err(format_err(path, "header dimensions disagree with the system"));
    }
    let sp = sidecar_path(path);
    let side: Sidecar = serde_json::from_slice(&fs::read(&sp).at(&sp)?).map_err(|e| format_err(&sp, e.to_string()))?;
    if side.system != name {
        return Err(format_err(&sp, "sidecar belongs to a different system"));
    }
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let id = r.u64()?;
        let tseed = r.u64()?;
        let len = r.u64()? as usize;
        let mut tr = Trajectory {
            id,
            seed: tseed,
            times: Vec::with_capacity(len),
            states: Vec::with_capacity(len),
            controls: Vec::with_capacity(len),
            params: side
                .params
                .get(&id)
                .cloned()
                .ok_or_else(|| format_err(&sp, format!("no parameters for trajectory {id}")))?,
        };
        for _ in 0..len {
            tr.times.push(r.f64()?);
            tr.states.push((0..n).map(|_| r.f64()).collect::<Result<_>>()?);
            tr.controls.push((0..m).map(|_| r.f64()).collect::<Result<_>>()?);
        }
        trajectories.push(tr);
    }
    if r.pos != bytes.len() {
        return Err(format_err(path, "trailing bytes after the last trajectory"));
    }
    let ds = Dataset {
        system,
        dt,
        seed,
        trajectories,
    };
    check_shapes(&ds, path)?;
    Ok(ds)
}

/// One row per sample: `traj_id, t, states..., controls...`.
pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let spec = SystemSpec::new(ds.system);
    let file = fs::File::create(path).at(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    header.extend(spec.state_names.iter().chain(&spec.control_names).map(|s| s.to_string()));
    let csv_err = |e: csv::Error| format_err(path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for tr in &ds.trajectories {
        for k in 0..tr.len() {
            let mut row = vec![tr.id.to_string(), tr.times[k].to_string()];
            row.extend(tr.states[k].iter().chain(&tr.controls[k]).map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().at(path)?;
    Ok(())
}

/// Hex SHA-256 over the given files, each prefixed by its length.
pub fn content_hash(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).at(p)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex_digest(h))
}

pub fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a store together with its sidecar.
pub fn store_hash(path: &Path) -> Result<String> {
    content_hash(&[path.to_path_buf(), sidecar_path(path)])
}
