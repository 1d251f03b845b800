#![allow(dead_code)]

use heartsiam::embednet::{init_params, loss_and_grads, ArchConfig, ConvBlock, LossConfig};
use heartsiam::sampler::Triplet;
use heartsiam::segmentation::{DurationDensity, DurationModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        input_channels: 4,
        input_len: 40,
        blocks: vec![ConvBlock {
            out_channels: 2,
            kernel: 3,
            pool: 2,
        }],
        embedding_dim: 4,
        l2_normalize_output: true,
    }
}

/// Worst `|analytic - fd| / (|fd| + 1e-8)` over every parameter, central
/// differences at `eps`, for a random batch of triplets on the tiny arch.
pub fn gradcheck_max_rel_err(seed: u64, eps: f64, alpha: f64) -> f64 {
    let arch = tiny_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params::<f64>(&arch, seed).unwrap();
    let mut params = params;
    // nonzero biases so every parameter is exercised
    for v in params.values.iter_mut() {
        if *v == 0.0 {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let inputs: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..4 * 40).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let views: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let batch = [
        Triplet { anchor: 0, positive: 1, negative: 2 },
        Triplet { anchor: 3, positive: 4, negative: 5 },
        Triplet { anchor: 1, positive: 3, negative: 0 },
    ];
    let cfg = LossConfig { alpha };
    let (_, grads) = loss_and_grads(&params, &batch, &views, &cfg).unwrap();
    let mut worst = 0.0f64;
    for i in 0..params.values.len() {
        let mut plus = params.clone();
        plus.values[i] += eps;
        let mut minus = params.clone();
        minus.values[i] -= eps;
        let lp = loss_and_grads(&plus, &batch, &views, &cfg).unwrap().0;
        let lm = loss_and_grads(&minus, &batch, &views, &cfg).unwrap().0;
        let fd = (lp - lm) / (2.0 * eps);
        let err = (grads.values[i] - fd).abs() / (fd.abs() + 1e-8);
        worst = worst.max(err);
    }
    worst
}

pub fn two_state_model(rng: &mut ChaCha8Rng) -> DurationModel {
    let states = (0..2)
        .map(|_| {
            let min = rng.random_range(1..=2usize);
            let max = rng.random_range(min + 1..=6usize);
            DurationDensity {
                mean: rng.random_range(min as f64..=max as f64),
                std: rng.random_range(0.5..2.0),
                min,
                max,
            }
        })
        .collect();
    DurationModel { states }
}

/// Score of a path under the decoder's model: initial log-probability,
/// emissions, and a duration term for every run not touching an edge.
/// `None` if the path is not a valid segmentation.
pub fn path_score(path: &[usize], em: &[Vec<f64>], m: &DurationModel, log_init: &[f64]) -> Option<f64> {
    let n = m.states.len();
    let runs = heartsiam::segmentation::runs(path);
    let mut score = log_init[runs[0].0];
    for (k, &(s, start, len)) in runs.iter().enumerate() {
        if k > 0 && s != (runs[k - 1].0 + 1) % n {
            return None;
        }
        let d = &m.states[s];
        if len > d.max {
            return None;
        }
        let edge = k == 0 || k + 1 == runs.len();
        if !edge {
            if len < d.min {
                return None;
            }
            let z = (len as f64 - d.mean) / d.std;
            score += -0.5 * z * z - (d.std * (2.0 * std::f64::consts::PI).sqrt()).ln();
        }
        for t in start..start + len {
            score += em[t][s];
        }
    }
    Some(score)
}

/// Best score over every 2-state segmentation of `t` frames.
pub fn brute_force_best(em: &[Vec<f64>], m: &DurationModel, log_init: &[f64]) -> f64 {
    let t = em.len();
    let mut best = f64::NEG_INFINITY;
    // bit i set: a run boundary between frames i and i+1
    for cuts in 0u32..(1 << (t - 1)) {
        for first in 0..2 {
            let mut s = first;
            let mut path = Vec::with_capacity(t);
            for i in 0..t {
                path.push(s);
                if i + 1 < t && cuts & (1 << i) != 0 {
                    s = 1 - s;
                }
            }
            if let Some(v) = path_score(&path, em, m, log_init) {
                best = best.max(v);
            }
        }
    }
    best
}
