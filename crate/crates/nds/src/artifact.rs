//! JSON model artifacts.

use std::fs;
use std::path::Path;

use nds_core::autodiff::Layout;
use nds_core::baselines::SparseModel;
use nds_core::models::{NdsConfig, NdsModel, Standardization};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, IoContext, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NdsArtifact {
    format_version: u32,
    system: String,
    config: NdsConfig,
    standardization: Standardization,
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SparseArtifact {
    format_version: u32,
    system: String,
    model: SparseModel,
}

pub fn save_model(path: &Path, model: &NdsModel) -> Result<()> {
    let a = NdsArtifact {
        format_version: FORMAT_VERSION,
        system: model.spec().name().to_string(),
        config: model.config.clone(),
        standardization: model.standardization.clone(),
        layout: model.layout.clone(),
        params: model.params.clone(),
    };
    fs::write(path, serde_json::to_string(&a).expect("artifact serializes")).at(path)
}

/// Loads and re-validates a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<NdsModel> {
    let a: NdsArtifact =
        serde_json::from_slice(&fs::read(path).at(path)?).map_err(|e| format_err(path, e.to_string()))?;
    if a.format_version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported artifact version {}", a.format_version)));
    }
    if a.system != a.config.system.name() {
        return Err(format_err(path, "artifact system disagrees with its configuration"));
    }
    Ok(NdsModel::from_parts(a.config, a.standardization, a.layout, a.params)?)
}

pub fn save_sparse(path: &Path, system: &str, model: &SparseModel) -> Result<()> {
    let a = SparseArtifact {
        format_version: FORMAT_VERSION,
        system: system.to_string(),
        model: model.clone(),
    };
    fs::write(path, serde_json::to_string(&a).expect("artifact serializes")).at(path)
}

pub fn load_sparse(path: &Path) -> Result<SparseModel> {
    let a: SparseArtifact =
        serde_json::from_slice(&fs::read(path).at(path)?).map_err(|e| format_err(path, e.to_string()))?;
    if a.format_version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported artifact version {}", a.format_version)));
    }
    Ok(a.model)
}
