//! JSON checkpoints: architecture, loss config and named row-major tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cast, ArchConfig, EmbeddingNetParams, LossConfig, Scalar};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: ArchConfig,
    pub loss: LossConfig,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(params: &EmbeddingNetParams<T>, loss: &LossConfig) -> Self {
        let tensors = params
            .layout
            .iter()
            .map(|s| {
                let data = params.values[s.offset..s.offset + s.len]
                    .iter()
                    .map(|v| v.to_f64().unwrap())
                    .collect();
                (
                    s.name.clone(),
                    TensorData {
                        shape: s.shape.clone(),
                        data,
                    },
                )
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            arch: params.arch.clone(),
            loss: loss.clone(),
            tensors,
        }
    }

    /// Rebuilds parameters, checking every tensor against the architecture.
    pub fn to_params<T: Scalar>(&self) -> Result<EmbeddingNetParams<T>> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format_version {} (expected {CHECKPOINT_VERSION})",
                self.format_version
            )));
        }
        let mut params = EmbeddingNetParams::<T>::zeros(&self.arch)?;
        if self.tensors.len() != params.layout.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} tensors", params.layout.len()),
                got: format!("{} tensors", self.tensors.len()),
            });
        }
        for spec in params.layout.clone() {
            let t = self.tensors.get(&spec.name).ok_or_else(|| Error::ShapeMismatch {
                expected: format!("tensor `{}`", spec.name),
                got: "missing".into(),
            })?;
            if t.shape != spec.shape || t.data.len() != spec.len {
                return Err(Error::ShapeMismatch {
                    expected: format!("`{}` {:?}", spec.name, spec.shape),
                    got: format!("{:?} with {} values", t.shape, t.data.len()),
                });
            }
            for (dst, &src) in params.values[spec.offset..spec.offset + spec.len].iter_mut().zip(&t.data) {
                *dst = cast(src);
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite { layer: "checkpoint".into() });
        }
        Ok(params)
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &EmbeddingNetParams<T>, loss: &LossConfig) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from_params(params, loss))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(EmbeddingNetParams<f32>, LossConfig)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    Ok((ck.to_params()?, ck.loss))
}
