//! Binary checkpoint: `HGAT` magic, a version byte, a little-endian `u32`
//! metadata length, TOML metadata, then every parameter array as
//! little-endian `f32` in metadata order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::atomic::write_atomic;
use crate::features::{FeatureConfig, FeatureSet};
use crate::model::{HgatConfig, HgatParams};
use crate::ndiff::Tensor;

pub const CHECKPOINT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"HGAT";

/// How the run that produced a checkpoint was set up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunInfo {
    pub theta: Option<f64>,
    pub split_seed: u64,
    pub init_seed: u64,
    pub train_seed: u64,
    pub ablate_schema: bool,
    pub homogeneous: bool,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: HgatConfig,
    pub params: HgatParams,
    /// `(node type, vocabulary fingerprint)` in type order.
    pub fingerprints: Vec<(String, String)>,
    pub best_val_loss: f64,
    pub epoch: usize,
    pub run: RunInfo,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    epoch: usize,
    best_val_loss: f64,
    config: HgatConfig,
    run: RunInfo,
    types: Vec<TypeMeta>,
    arrays: Vec<ArrayMeta>,
}

#[derive(Serialize, Deserialize)]
struct TypeMeta {
    name: String,
    dim: usize,
    fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    /// Refuses features whose vocabularies differ from the ones trained on.
    pub fn check_features(&self, features: &FeatureSet) -> Result<(), TrainError> {
        let found = features.fingerprints();
        if found.len() != self.fingerprints.len() {
            return Err(TrainError::Fingerprint {
                node_type: "*".into(),
                expected: format!("{} node types", self.fingerprints.len()),
                found: format!("{} node types", found.len()),
            });
        }
        for ((name, expected), (found_name, fp)) in self.fingerprints.iter().zip(&found) {
            if name != found_name || expected != fp {
                return Err(TrainError::Fingerprint {
                    node_type: name.clone(),
                    expected: expected.clone(),
                    found: fp.clone(),
                });
            }
        }
        Ok(())
    }

    /// Serialized bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.params.named();
        let meta = Meta {
            epoch: self.epoch,
            best_val_loss: self.best_val_loss,
            config: self.config.clone(),
            run: self.run.clone(),
            types: self
                .fingerprints
                .iter()
                .zip(self.params.feature_dims())
                .map(|((name, fp), dim)| TypeMeta {
                    name: name.clone(),
                    dim,
                    fingerprint: fp.clone(),
                })
                .collect(),
            arrays: named
                .iter()
                .map(|(name, t)| ArrayMeta {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let meta = toml::to_string(&meta).expect("checkpoint metadata serializes");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.push(CHECKPOINT_VERSION);
        bytes.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        bytes.extend_from_slice(meta.as_bytes());
        for (_, t) in named {
            for &v in t.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, TrainError> {
        let bad = |message: String| TrainError::Format {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(bad("bad magic bytes (not a checkpoint)".into()));
        }
        let version = *bytes
            .get(4)
            .ok_or_else(|| bad("truncated: missing version byte".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = bytes
            .get(5..9)
            .ok_or_else(|| bad("truncated: missing metadata length".into()))?;
        let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
        let meta = bytes
            .get(9..9 + len)
            .ok_or_else(|| bad("truncated: metadata section incomplete".into()))?;
        let meta =
            std::str::from_utf8(meta).map_err(|e| bad(format!("metadata is not UTF-8: {e}")))?;
        let meta: Meta =
            toml::from_str(meta).map_err(|e| bad(format!("unreadable metadata: {e}")))?;

        let mut offset = 9 + len;
        let mut arrays = Vec::with_capacity(meta.arrays.len());
        for a in &meta.arrays {
            let n: usize = a.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| bad(format!("truncated: array `{}` incomplete", a.name)))?;
            offset += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let t = Tensor::new(a.shape.clone(), data).map_err(|e| bad(e.to_string()))?;
            arrays.push((a.name.clone(), t));
        }
        if offset != bytes.len() {
            return Err(bad(format!(
                "{} unexpected trailing bytes",
                bytes.len() - offset
            )));
        }
        let names: Vec<String> = meta.types.iter().map(|t| t.name.clone()).collect();
        let dims: Vec<usize> = meta.types.iter().map(|t| t.dim).collect();
        let params = HgatParams::from_named(&meta.config, &names, &dims, arrays)
            .map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint {
            config: meta.config,
            params,
            fingerprints: meta
                .types
                .into_iter()
                .map(|t| (t.name, t.fingerprint))
                .collect(),
            best_val_loss: meta.best_val_loss,
            epoch: meta.epoch,
            run: meta.run,
        })
    }
}

/// Writes atomically; parameters are stored at 32-bit precision.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), TrainError> {
    write_atomic(path, &checkpoint.to_bytes()).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes, path)
}
