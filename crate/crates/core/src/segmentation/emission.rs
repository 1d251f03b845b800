//! Per-state logistic-regression emission model.

use serde::{Deserialize, Serialize};

use super::features::Features;
use super::HeartState;
use crate::error::{Error, Result};

const ITERATIONS: usize = 500;
const STEP: f64 = 0.1;
const L2: f64 = 1e-4;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionModel {
    /// One row per state: feature weights followed by the bias.
    pub weights: Vec<Vec<f64>>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Training-frame state frequencies.
    pub priors: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits four one-vs-rest logistic regressions by full-batch gradient descent.
pub fn fit_emission(features: &[Features], labels: &[Vec<HeartState>]) -> Result<EmissionModel> {
    if features.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature matrices but {} label sequences",
            features.len(),
            labels.len()
        )));
    }
    let n_feat = features
        .first()
        .map(|f| f.n_features)
        .ok_or(Error::Empty("emission training set"))?;

    let mut rows: Vec<&[f64]> = Vec::new();
    let mut targets: Vec<usize> = Vec::new();
    for (f, l) in features.iter().zip(labels) {
        if f.n_features != n_feat {
            return Err(Error::InvalidInput("inconsistent feature counts".into()));
        }
        let n = f.n_frames.min(l.len());
        for t in 0..n {
            rows.push(f.row(t));
            targets.push(l[t].index());
        }
    }
    let mut counts = [0usize; 4];
    for &s in &targets {
        counts[s] += 1;
    }
    for s in HeartState::ALL {
        if counts[s.index()] == 0 {
            return Err(Error::MissingState(s.name()));
        }
    }

    let n = rows.len() as f64;
    let mut mean = vec![0.0; n_feat];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = vec![0.0; n_feat];
    for r in &rows {
        for j in 0..n_feat {
            std[j] += (r[j] - mean[j]).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / n).sqrt().max(1e-9));

    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| (0..n_feat).map(|j| (r[j] - mean[j]) / std[j]).collect())
        .collect();

    let mut weights = Vec::with_capacity(4);
    for s in 0..4 {
        let mut w = vec![0.0; n_feat + 1];
        for _ in 0..ITERATIONS {
            let mut grad = vec![0.0; n_feat + 1];
            for (xi, &ti) in x.iter().zip(&targets) {
                let z = w[n_feat] + xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let err = sigmoid(z) - if ti == s { 1.0 } else { 0.0 };
                for j in 0..n_feat {
                    grad[j] += err * xi[j];
                }
                grad[n_feat] += err;
            }
            for j in 0..=n_feat {
                let penalty = if j < n_feat { 2.0 * L2 * w[j] } else { 0.0 };
                w[j] -= STEP * (grad[j] / n + penalty);
            }
        }
        weights.push(w);
    }

    Ok(EmissionModel {
        weights,
        feature_mean: mean,
        feature_std: std,
        priors: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

impl EmissionModel {
    pub fn n_features(&self) -> usize {
        self.feature_mean.len()
    }

    /// State posteriors for one frame, normalized to sum to 1.
    pub fn posteriors(&self, row: &[f64]) -> [f64; 4] {
        let nf = self.n_features();
        let mut p = [0.0; 4];
        for (s, w) in self.weights.iter().enumerate() {
            let z = w[nf]
                + (0..nf)
                    .map(|j| w[j] * (row[j] - self.feature_mean[j]) / self.feature_std[j])
                    .sum::<f64>();
            p[s] = sigmoid(z).max(PROB_FLOOR);
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    }

    /// Scaled log-likelihoods `ln P(state | frame) - ln P(state)` per frame.
    pub fn log_emissions(&self, f: &Features) -> Result<Vec<Vec<f64>>> {
        if f.n_features != self.n_features() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} features", self.n_features()),
                got: format!("{} features", f.n_features),
            });
        }
        Ok((0..f.n_frames)
            .map(|t| {
                let p = self.posteriors(f.row(t));
                (0..4)
                    .map(|s| p[s].ln() - self.priors[s].max(PROB_FLOOR).ln())
                    .collect()
            })
            .collect())
    }

    pub fn predict(&self, row: &[f64]) -> HeartState {
        let p = self.posteriors(row);
        let best = (0..4).fold(0, |b, s| if p[s] > p[b] { s } else { b });
        HeartState::ALL[best]
    }
}
