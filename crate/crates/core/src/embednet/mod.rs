//! The shared-weight 1-D CNN embedding, triplet loss, gradients, Adam and training.
//!
//! The three legs of a triplet are evaluated by one parameter set, so the
//! network is stored once and every leg is a call to [`forward`].

mod adam;
mod checkpoint;
mod loss;
mod net;
mod train;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TensorData, CHECKPOINT_VERSION};
pub use loss::{loss_and_grads, triplet_loss, LossConfig};
pub use net::{forward, Embedding};
pub use train::{train, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::rng;

/// Floating-point type the network runs in: `f32` for training, `f64` for gradient checks.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static {}
impl<T> Scalar for T where T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static {}

pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub input_channels: usize,
    pub input_len: usize,
    pub blocks: Vec<ConvBlock>,
    pub embedding_dim: usize,
    pub l2_normalize_output: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let block = |out_channels| ConvBlock {
            out_channels,
            kernel: 5,
            pool: 4,
        };
        ArchConfig {
            input_channels: 4,
            input_len: crate::segmentation::CYCLE_LEN,
            blocks: vec![block(8), block(16), block(32)],
            embedding_dim: 64,
            l2_normalize_output: true,
        }
    }
}

impl ArchConfig {
    /// `(channels, length)` after each block, starting with the input.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(self.input_channels, self.input_len)];
        let mut len = self.input_len;
        for b in &self.blocks {
            let conv_len = (len + 1).saturating_sub(b.kernel);
            len = if b.pool == 0 { 0 } else { conv_len / b.pool };
            out.push((b.out_channels, len));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("arch: {m}")));
        if self.input_channels == 0 || self.input_len == 0 {
            return bad("input shape must be non-empty".into());
        }
        if self.embedding_dim < 2 {
            return bad("embedding_dim must be >= 2".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.kernel % 2 == 0 {
                return bad(format!("block {i}: kernel {} must be odd", b.kernel));
            }
            if b.pool < 1 || b.out_channels == 0 {
                return bad(format!("block {i}: pool and out_channels must be >= 1"));
            }
        }
        if self.shapes().iter().any(|&(_, l)| l == 0) {
            return bad("input too short for the conv/pool stack".into());
        }
        Ok(())
    }

    /// Channels entering the dense layer.
    pub fn feature_channels(&self) -> usize {
        self.blocks.last().map_or(self.input_channels, |b| b.out_channels)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

fn layout(arch: &ArchConfig) -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let len = shape.iter().product();
        specs.push(TensorSpec {
            name,
            shape,
            offset,
            len,
        });
        offset += len;
    };
    let mut in_ch = arch.input_channels;
    for (i, b) in arch.blocks.iter().enumerate() {
        push(format!("conv{i}.weight"), vec![b.out_channels, in_ch, b.kernel]);
        push(format!("conv{i}.bias"), vec![b.out_channels]);
        in_ch = b.out_channels;
    }
    push("dense.weight".into(), vec![arch.embedding_dim, in_ch]);
    push("dense.bias".into(), vec![arch.embedding_dim]);
    specs
}

/// All network weights in one flat buffer, addressed through a tensor layout.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingNetParams<T> {
    pub arch: ArchConfig,
    pub layout: Vec<TensorSpec>,
    pub values: Vec<T>,
}

impl<T: Scalar> EmbeddingNetParams<T> {
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let layout = layout(arch);
        let n = layout.last().map_or(0, |s| s.offset + s.len);
        Ok(EmbeddingNetParams {
            arch: arch.clone(),
            layout,
            values: vec![T::zero(); n],
        })
    }

    pub fn zeros_like(&self) -> Self {
        EmbeddingNetParams {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            values: vec![T::zero(); self.values.len()],
        }
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let spec = self.layout.iter().find(|s| s.name == name)?.clone();
        Some(&mut self.values[spec.offset..spec.offset + spec.len])
    }

    pub(crate) fn conv(&self, i: usize) -> (&[T], &[T]) {
        let w = &self.layout[2 * i];
        let b = &self.layout[2 * i + 1];
        (
            &self.values[w.offset..w.offset + w.len],
            &self.values[b.offset..b.offset + b.len],
        )
    }

    pub(crate) fn dense(&self) -> (&[T], &[T]) {
        let n = self.layout.len();
        let w = &self.layout[n - 2];
        let b = &self.layout[n - 1];
        (
            &self.values[w.offset..w.offset + w.len],
            &self.values[b.offset..b.offset + b.len],
        )
    }

    pub(crate) fn tensor_offset(&self, idx: usize) -> usize {
        self.layout[idx].offset
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> EmbeddingNetParams<U> {
        EmbeddingNetParams {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            values: self
                .values
                .iter()
                .map(|v| cast(v.to_f64().unwrap()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Glorot-uniform weights, zero biases. Values are drawn in f64, so `f32`
/// and `f64` nets from one seed agree up to rounding.
pub fn init_params<T: Scalar>(arch: &ArchConfig, seed: u64) -> Result<EmbeddingNetParams<T>> {
    let mut p = EmbeddingNetParams::<T>::zeros(arch)?;
    let mut r = rng::stream(&[seed, 0x1a17]);
    for spec in p.layout.clone() {
        if spec.name.ends_with(".bias") {
            continue;
        }
        let (fan_in, fan_out) = match spec.shape.as_slice() {
            [out, inp, k] => (inp * k, out * k),
            [out, inp] => (*inp, *out),
            _ => unreachable!("weights are 2-D or 3-D"),
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in &mut p.values[spec.offset..spec.offset + spec.len] {
            *v = cast(r.random_range(-limit..limit));
        }
    }
    Ok(p)
}
