//! Single-file checkpoint: an 8-byte magic, a little-endian `u64` manifest
//! length, the JSON manifest, then raw little-endian `f32` parameter blocks.
//!
//! Parameters are rounded to `f32` when a checkpoint is created, so a
//! save/load round trip reproduces the in-memory checkpoint bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Hyperparams, Model, ModelParams};
use crate::data::NormalizerParams;
use crate::error::{Error, Result};
use crate::scoring::{anomaly_score, ErrorTerms};
use crate::params::Dims;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TSADCKP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub name: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            name: "adam".into(),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub hyperparams: Hyperparams,
    pub dims: Dims,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub normalizer: NormalizerParams,
    pub sensor_names: Vec<String>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Per-sensor error terms on the held-out validation windows, used to
    /// calibrate the detection threshold for any `β`.
    pub calibration: Vec<ErrorTerms>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    hyperparams: Hyperparams,
    dims: Dims,
    seed: u64,
    optimizer: OptimizerConfig,
    normalizer: NormalizerParams,
    sensor_names: Vec<String>,
    history: Vec<EpochRecord>,
    best_epoch: Option<usize>,
    calibration: Vec<ErrorTerms>,
    blocks: Vec<BlockEntry>,
}

impl ModelCheckpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &Model,
        optimizer: OptimizerConfig,
        normalizer: NormalizerParams,
        sensor_names: Vec<String>,
        history: Vec<EpochRecord>,
        best_epoch: Option<usize>,
        calibration: Vec<ErrorTerms>,
    ) -> Self {
        let mut params = model.params.clone();
        params.quantize();
        Self {
            format_version: FORMAT_VERSION,
            hyperparams: model.hp.clone(),
            dims: model.dims,
            seed: model.hp.seed,
            optimizer,
            normalizer,
            sensor_names,
            history,
            best_epoch,
            calibration,
            params,
        }
    }

    /// Anomaly scores of the calibration windows under weight `beta`.
    pub fn calibration_scores(&self, beta: f64) -> Vec<f64> {
        self.calibration.iter().map(|e| anomaly_score(&e.root_cause_scores(beta))).collect()
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.dims, self.hyperparams.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blocks = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        for (name, t) in self.params.named_tensors() {
            blocks.push(BlockEntry {
                name,
                shape: [t.nrows(), t.ncols()],
                offset: payload.len(),
                len: t.len() * 4,
            });
            for v in t.iter() {
                payload.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: self.format_version,
            hyperparams: self.hyperparams.clone(),
            dims: self.dims,
            seed: self.seed,
            optimizer: self.optimizer.clone(),
            normalizer: self.normalizer.clone(),
            sensor_names: self.sensor_names.clone(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            calibration: self.calibration.clone(),
            blocks,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| Error::Checkpoint("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let payload = &bytes[16 + len..];
        let mut params = ModelParams::init(manifest.dims, 0);
        {
            let mut slots = params.named_tensors_mut();
            if slots.len() != manifest.blocks.len() {
                return Err(Error::Checkpoint(format!(
                    "expected {} parameter blocks, found {}",
                    slots.len(),
                    manifest.blocks.len()
                )));
            }
            for (name, slot) in slots.iter_mut() {
                let b = manifest
                    .blocks
                    .iter()
                    .find(|b| &b.name == name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))?;
                if b.shape != [slot.nrows(), slot.ncols()] || b.len != b.shape[0] * b.shape[1] * 4 {
                    return Err(Error::Checkpoint(format!(
                        "block {name} has shape {:?}, model expects {:?}",
                        b.shape,
                        slot.dim()
                    )));
                }
                let raw = payload
                    .get(b.offset..b.offset + b.len)
                    .ok_or_else(|| Error::Checkpoint(format!("block {name} is truncated")))?;
                let vals: Vec<f64> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect();
                **slot = Array2::from_shape_vec((b.shape[0], b.shape[1]), vals)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
            }
        }
        Ok(Self {
            format_version: manifest.format_version,
            hyperparams: manifest.hyperparams,
            dims: manifest.dims,
            seed: manifest.seed,
            optimizer: manifest.optimizer,
            normalizer: manifest.normalizer,
            sensor_names: manifest.sensor_names,
            history: manifest.history,
            best_epoch: manifest.best_epoch,
            calibration: manifest.calibration,
            params,
        })
    }

    /// Written to a temporary sibling and renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
        ));
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
