//! Hinged triplet loss and its batch gradient.

use serde::{Deserialize, Serialize};

use super::net::{backward, forward_cached};
use super::{cast, EmbeddingNetParams, Scalar};
use crate::error::{Error, Result};
use crate::sampler::Triplet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.5 }
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// `max(0, |a - p|^2 - |a - n|^2 + alpha)`.
pub fn triplet_loss<T: Scalar>(ea: &[T], ep: &[T], en: &[T], cfg: &LossConfig) -> Result<T> {
    if ea.len() != ep.len() || ea.len() != en.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}-d embeddings", ea.len()),
            got: format!("{} and {}", ep.len(), en.len()),
        });
    }
    let v = sq_dist(ea, ep) - sq_dist(ea, en) + cast(cfg.alpha);
    Ok(v.max(T::zero()))
}

/// Mean triplet loss over `batch` and its gradient w.r.t. every parameter.
/// `inputs[i]` is the network input for segment index `i`. Triplet
/// contributions are accumulated in batch order.
pub fn loss_and_grads<T: Scalar>(
    params: &EmbeddingNetParams<T>,
    batch: &[Triplet],
    inputs: &[&[T]],
    cfg: &LossConfig,
) -> Result<(T, EmbeddingNetParams<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("triplet batch"));
    }
    let mut grads = params.zeros_like();
    let scale: T = cast(1.0 / batch.len() as f64);
    let two: T = cast(2.0);
    let mut total = T::zero();

    let fetch = |i: usize| -> Result<&[T]> {
        inputs
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("segment index {i} out of range")))
    };

    for t in batch {
        let ca = forward_cached(params, fetch(t.anchor)?)?;
        let cp = forward_cached(params, fetch(t.positive)?)?;
        let cn = forward_cached(params, fetch(t.negative)?)?;
        let (a, p, n) = (&ca.output, &cp.output, &cn.output);
        let loss = triplet_loss(a, p, n, cfg)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { layer: "loss".into() });
        }
        total = total + loss;
        if loss <= T::zero() {
            continue;
        }
        let da: Vec<T> = p.iter().zip(n).map(|(&pv, &nv)| two * (nv - pv) * scale).collect();
        let dp: Vec<T> = a.iter().zip(p).map(|(&av, &pv)| two * (pv - av) * scale).collect();
        let dn: Vec<T> = a.iter().zip(n).map(|(&av, &nv)| two * (av - nv) * scale).collect();
        backward(params, &ca, &da, &mut grads);
        backward(params, &cp, &dp, &mut grads);
        backward(params, &cn, &dn, &mut grads);
    }
    Ok((total * scale, grads))
}
