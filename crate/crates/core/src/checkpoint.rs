//! Model checkpoints: a safetensors file whose metadata carries the
//! configuration fingerprint, the selected epoch and its curriculum stages.

use std::collections::HashMap;
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Precision;
use crate::dataset::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelDims, RecapModel, Stages};
use crate::revisit::RevisitConfig;

pub const CHECKPOINT_FORMAT: &str = "recap-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_KEY: &str = "recap";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    pub best_epoch: usize,
    pub best_val_mrr: Option<f64>,
    /// Components live at `best_epoch`; evaluation reuses them.
    pub stages: Stages,
    pub precision: Precision,
}

impl CheckpointMeta {
    pub fn new(fingerprint: String, best_epoch: usize, best_val_mrr: Option<f64>, stages: Stages, precision: Precision) -> Self {
        CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            fingerprint,
            best_epoch,
            best_val_mrr,
            stages,
            precision,
        }
    }
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    model: &'a ModelConfig,
    revisit: &'a RevisitConfig,
    dims: &'a ModelDims,
    precision: Precision,
    vocabulary: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 over everything that determines the scoring function's shape
/// and index spaces.
pub fn fingerprint(
    model: &ModelConfig,
    revisit: &RevisitConfig,
    dims: &ModelDims,
    vocabulary: &Vocabulary,
    precision: Precision,
) -> Result<String> {
    let input = FingerprintInput {
        model,
        revisit,
        dims,
        precision,
        vocabulary: sha256_hex(&serde_json::to_vec(vocabulary)?),
    };
    Ok(sha256_hex(&serde_json::to_vec(&input)?))
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn save(path: impl AsRef<Path>, model: &RecapModel, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    let tensors: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .map(|p| Ok((p.name.clone(), p.var.as_tensor().contiguous()?)))
        .collect::<Result<_>>()?;
    let info = HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]);
    safetensors::serialize_to_file(tensors, Some(info), path).map_err(|e| format_error(path, e.to_string()))
}

fn parse_meta(path: &Path, bytes: &[u8]) -> Result<CheckpointMeta> {
    let (_, header) = safetensors::SafeTensors::read_metadata(bytes).map_err(|e| format_error(path, e.to_string()))?;
    let raw = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| format_error(path, "checkpoint metadata missing"))?;
    let meta: CheckpointMeta = serde_json::from_str(raw).map_err(|e| format_error(path, e.to_string()))?;
    if meta.format != CHECKPOINT_FORMAT || meta.version != CHECKPOINT_VERSION {
        return Err(format_error(
            path,
            format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                meta.format, meta.version
            ),
        ));
    }
    Ok(meta)
}

pub fn read_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_meta(path, &bytes)
}

/// Copies the stored parameters into `model` after checking the fingerprint.
pub fn load_into(path: impl AsRef<Path>, model: &RecapModel, expected_fingerprint: &str) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = parse_meta(path, &bytes)?;
    if meta.fingerprint != expected_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: expected_fingerprint.to_string(),
            found: meta.fingerprint,
        });
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, model.device())?;
    if tensors.len() != model.params().len() {
        return Err(format_error(
            path,
            format!("{} tensors stored, model has {}", tensors.len(), model.params().len()),
        ));
    }
    for p in model.params() {
        let t = tensors
            .get(&p.name)
            .ok_or_else(|| format_error(path, format!("tensor `{}` missing", p.name)))?;
        if t.dims() != p.var.dims() || t.dtype() != p.var.dtype() {
            return Err(format_error(
                path,
                format!("tensor `{}` is {:?} {:?}, expected {:?} {:?}", p.name, t.dtype(), t.dims(), p.var.dtype(), p.var.dims()),
            ));
        }
        p.var.set(t)?;
    }
    Ok(meta)
}
