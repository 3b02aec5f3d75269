//! Checkpoint directories: one `.tns` file per parameter plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, Params};
use crate::sampling::GridMode;
use crate::tensor::{DType, Tensor};

pub const MANIFEST_FORMAT: &str = "omnilayout-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: ModelConfig,
    pub mode: GridMode,
    pub parameter_count: usize,
    pub parameters: Vec<ParamEntry>,
}

/// Writes parameters as `f64` so a reload is bit-identical.
pub fn save_checkpoint(dir: &Path, cfg: &ModelConfig, params: &Params) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(params.tensors.len());
    for (name, t) in params.names.iter().zip(&params.tensors) {
        let file = format!("{name}.tns");
        t.save(&dir.join(&file), DType::F64)?;
        entries.push(ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        config: cfg.clone(),
        mode: cfg.mode,
        parameter_count: params.count(),
        parameters: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

/// Rebuilds the model (and its grids) from the manifest and loads the parameters.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, Params), ModelError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(ModelError::Checkpoint(format!("unknown format {}", manifest.format)));
    }
    if manifest.mode != manifest.config.mode {
        return Err(ModelError::Checkpoint("grid mode disagrees with config".into()));
    }
    let model = Model::new(manifest.config)?;
    let mut names = Vec::with_capacity(manifest.parameters.len());
    let mut tensors = Vec::with_capacity(manifest.parameters.len());
    for e in manifest.parameters {
        if e.file.contains('/') || e.file.contains("..") {
            return Err(ModelError::Checkpoint(format!("bad parameter file name {}", e.file)));
        }
        let t = Tensor::load(&dir.join(&e.file))?;
        if t.shape() != e.shape.as_slice() {
            return Err(ModelError::Checkpoint(format!("{} has shape {:?}", e.name, t.shape())));
        }
        names.push(e.name);
        tensors.push(t);
    }
    let params = Params { names, tensors };
    model.check_params(&params)?;
    Ok((model, params))
}
