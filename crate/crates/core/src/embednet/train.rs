use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{init_params, loss_and_grads, AdamState, ArchConfig, EmbeddingNetParams, LossConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::sampler::Triplet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 32,
            lr: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EmbeddingNetParams<f32>,
    /// Mean triplet loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Seeded per-epoch shuffles, mini-batch triplet loss, Adam.
pub fn train(
    triplets: &[Triplet],
    inputs: &[&[f32]],
    arch: &ArchConfig,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if triplets.is_empty() {
        return Err(Error::Empty("training triplets"));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("training batch must be >= 1".into()));
    }
    let mut params = init_params::<f32>(arch, cfg.seed)?;
    let mut adam = AdamState::new(params.num_params(), cfg.lr);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch);

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(&[cfg.seed, 0x5348_5546, epoch as u64]));
        let mut epoch_sum = 0.0f64;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| triplets[i]));
            let (loss, grads) = loss_and_grads(&params, &batch, inputs, loss_cfg).map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch: bi },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            epoch_sum += loss as f64 * chunk.len() as f64;
            adam.step(&mut params, &grads)?;
        }
        let mean = epoch_sum / triplets.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.5}");
        trace.push(mean);
    }
    Ok(TrainOutcome {
        params,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::super::ConvBlock;
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small_arch() -> ArchConfig {
        ArchConfig {
            input_channels: 4,
            input_len: 64,
            blocks: vec![ConvBlock { out_channels: 4, kernel: 3, pool: 2 }],
            embedding_dim: 4,
            l2_normalize_output: true,
        }
    }

    /// Two classes: energy in bands 0/1 vs bands 2/3, plus noise.
    fn clusters(n: usize) -> (Vec<Vec<f32>>, Vec<Triplet>) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut data = Vec::new();
        for i in 0..n {
            let class = i % 2;
            let mut x = vec![0.0f32; 4 * 64];
            for (j, v) in x.iter_mut().enumerate() {
                let band = j / 64;
                let on = (band < 2) == (class == 0);
                let carrier = ((j % 64) as f32 * 0.9).sin();
                *v = if on { carrier } else { 0.0 } + r.random_range(-0.1..0.1);
            }
            data.push(x);
        }
        let mut trips = Vec::new();
        for _ in 0..200 {
            let a = r.random_range(0..n);
            let mut p = r.random_range(0..n);
            while p % 2 != a % 2 || p == a {
                p = r.random_range(0..n);
            }
            let mut q = r.random_range(0..n);
            while q % 2 == a % 2 {
                q = r.random_range(0..n);
            }
            trips.push(Triplet { anchor: a, positive: p, negative: q });
        }
        (data, trips)
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let (data, trips) = clusters(40);
        let views: Vec<&[f32]> = data.iter().map(Vec::as_slice).collect();
        let cfg = TrainConfig { epochs: 15, batch: 32, lr: 1e-2, seed: 3 };
        let out = train(&trips, &views, &small_arch(), &LossConfig::default(), &cfg).unwrap();
        assert_eq!(out.loss_trace.len(), 15);
        assert!(out.loss_trace.last().unwrap() < out.loss_trace.first().unwrap(), "{:?}", out.loss_trace);
    }

    #[test]
    fn zero_epochs_returns_init_and_runs_are_reproducible() {
        let (data, trips) = clusters(10);
        let views: Vec<&[f32]> = data.iter().map(Vec::as_slice).collect();
        let arch = small_arch();
        let cfg = TrainConfig { epochs: 0, batch: 32, lr: 1e-4, seed: 8 };
        let out = train(&trips, &views, &arch, &LossConfig::default(), &cfg).unwrap();
        assert_eq!(out.params, init_params::<f32>(&arch, 8).unwrap());
        assert!(out.loss_trace.is_empty());

        let cfg = TrainConfig { epochs: 2, batch: 7, lr: 1e-3, seed: 8 };
        let a = train(&trips, &views, &arch, &LossConfig::default(), &cfg).unwrap();
        let b = train(&trips, &views, &arch, &LossConfig::default(), &cfg).unwrap();
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn empty_triplets_rejected() {
        assert!(train(&[], &[], &small_arch(), &LossConfig::default(), &TrainConfig::default()).is_err());
    }
}
