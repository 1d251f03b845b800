//! Duration-explicit HMM decoding with a cyclic state topology.
//!
//! A segmentation is a sequence of (state, duration) runs covering all frames,
//! with each run's state following its predecessor's in the cycle. Its score
//! is the initial-state log-probability, plus the summed emission
//! log-probabilities, plus a Gaussian duration log-density for every interior
//! run. The first and last runs are truncated by the recording edges; their
//! durations may be anything in `1..=max` and carry no duration term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian duration density in frames, clamped to `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationDensity {
    pub mean: f64,
    pub std: f64,
    pub min: usize,
    pub max: usize,
}

impl DurationDensity {
    /// Log-density of an interior run of `d` frames (`-inf` outside the clamps).
    pub fn log_prob(&self, d: usize) -> f64 {
        if d < self.min || d > self.max {
            return f64::NEG_INFINITY;
        }
        let z = (d as f64 - self.mean) / self.std;
        -0.5 * z * z - (self.std * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationModel {
    pub states: Vec<DurationDensity>,
}

impl DurationModel {
    pub fn max_duration(&self) -> usize {
        self.states.iter().map(|d| d.max).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy)]
struct Back {
    duration: usize,
}

/// Most likely state per frame. `log_emissions` is `T × S`; `log_init` has length `S`.
///
/// Ties prefer the shorter run, then the lower state index.
pub fn viterbi_cyclic(
    log_emissions: &[Vec<f64>],
    durations: &DurationModel,
    log_init: &[f64],
) -> Result<Vec<usize>> {
    let t_len = log_emissions.len();
    let n_states = durations.states.len();
    if n_states == 0 || log_init.len() != n_states {
        return Err(Error::InvalidInput("duration model and initial distribution disagree".into()));
    }
    if t_len == 0 {
        return Err(Error::DecodeTooShort { got: 0, needed: 1 });
    }
    if log_emissions.iter().any(|row| row.len() != n_states) {
        return Err(Error::ShapeMismatch {
            expected: format!("{n_states} emission columns"),
            got: "ragged emission rows".into(),
        });
    }

    // cum[s][t] = sum of emissions of state s over frames 0..t
    let cum: Vec<Vec<f64>> = (0..n_states)
        .map(|s| {
            let mut c = Vec::with_capacity(t_len + 1);
            c.push(0.0);
            let mut acc = 0.0;
            for row in log_emissions {
                acc += row[s];
                c.push(acc);
            }
            c
        })
        .collect();
    let run = |s: usize, start: usize, end: usize| cum[s][end + 1] - cum[s][start];
    let prev = |s: usize| (s + n_states - 1) % n_states;

    let dur_lp: Vec<Vec<f64>> = durations
        .states
        .iter()
        .map(|d| (0..=d.max).map(|k| d.log_prob(k)).collect())
        .collect();

    // best[t][s]: best score of a prefix whose run of state s ends at frame t
    // and is not the final run.
    let mut best = vec![vec![f64::NEG_INFINITY; n_states]; t_len];
    let mut back = vec![vec![Back { duration: 0 }; n_states]; t_len];
    for t in 0..t_len {
        for s in 0..n_states {
            let max_d = durations.states[s].max.min(t + 1);
            for d in 1..=max_d {
                let start = t + 1 - d;
                let cand = if start == 0 {
                    log_init[s] + run(s, 0, t)
                } else {
                    let lp = dur_lp[s][d];
                    let before = best[start - 1][prev(s)];
                    if lp == f64::NEG_INFINITY || before == f64::NEG_INFINITY {
                        continue;
                    }
                    before + run(s, start, t) + lp
                };
                if cand > best[t][s] {
                    best[t][s] = cand;
                    back[t][s] = Back { duration: d };
                }
            }
        }
    }

    let mut final_score = f64::NEG_INFINITY;
    let mut final_choice = None;
    let max_any = durations.max_duration().min(t_len);
    for d in 1..=max_any {
        for s in 0..n_states {
            if d > durations.states[s].max {
                continue;
            }
            let start = t_len - d;
            let cand = if start == 0 {
                log_init[s] + run(s, 0, t_len - 1)
            } else {
                best[start - 1][prev(s)] + run(s, start, t_len - 1)
            };
            if cand > final_score {
                final_score = cand;
                final_choice = Some((s, d));
            }
        }
    }
    let (mut s, mut d) = final_choice
        .filter(|_| final_score.is_finite())
        .ok_or(Error::DecodeTooShort {
            got: t_len,
            needed: durations.max_duration(),
        })?;

    let mut path = vec![0usize; t_len];
    let mut end = t_len - 1;
    loop {
        let start = end + 1 - d;
        path[start..=end].iter_mut().for_each(|p| *p = s);
        if start == 0 {
            break;
        }
        end = start - 1;
        s = prev(s);
        d = back[end][s].duration;
    }
    Ok(path)
}

/// Splits a per-frame state path into `(state, start, len)` runs.
pub fn runs(path: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::new();
    for (t, &s) in path.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.0 == s => r.2 += 1,
            _ => out.push((s, t, 1)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn model(specs: &[(f64, f64, usize, usize)]) -> DurationModel {
        DurationModel {
            states: specs
                .iter()
                .map(|&(mean, std, min, max)| DurationDensity { mean, std, min, max })
                .collect(),
        }
    }

    #[test]
    fn single_frame() {
        let m = model(&[(2.0, 1.0, 1, 3), (2.0, 1.0, 1, 3)]);
        let path = viterbi_cyclic(&[vec![0.0, 1.0]], &m, &[0.0, 0.0]).unwrap();
        assert_eq!(path, vec![1]);
    }

    #[test]
    fn follows_strong_emissions() {
        let m = model(&[(3.0, 1.0, 1, 6), (3.0, 1.0, 1, 6)]);
        let truth = [0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1];
        let em: Vec<Vec<f64>> = truth
            .iter()
            .map(|&s| if s == 0 { vec![0.0, -20.0] } else { vec![-20.0, 0.0] })
            .collect();
        let ln_half = 0.5f64.ln();
        assert_eq!(viterbi_cyclic(&em, &m, &[ln_half, ln_half]).unwrap(), truth);
    }

    #[test]
    fn obeys_cyclic_order_on_random_inputs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let m = model(&[(6.0, 1.5, 2, 12), (14.0, 3.5, 2, 28), (5.0, 1.25, 2, 10), (24.0, 6.0, 2, 48)]);
        for _ in 0..50 {
            let t_len = rng.random_range(1..300);
            let em: Vec<Vec<f64>> = (0..t_len)
                .map(|_| (0..4).map(|_| rng.random_range(-5.0..0.0)).collect())
                .collect();
            let path = viterbi_cyclic(&em, &m, &[0.25f64.ln(); 4]).unwrap();
            let r = runs(&path);
            for w in r.windows(2) {
                assert_eq!(w[1].0, (w[0].0 + 1) % 4);
            }
            for (i, &(s, _, len)) in r.iter().enumerate() {
                let edge = i == 0 || i + 1 == r.len();
                assert!(len <= m.states[s].max);
                if !edge {
                    assert!(len >= m.states[s].min);
                }
            }
        }
    }

    #[test]
    fn emissions_agreeing_with_modal_runs_are_recovered() {
        let m = model(&[(6.0, 1.5, 2, 12), (14.0, 3.5, 2, 28), (5.0, 1.25, 2, 10), (24.0, 6.0, 2, 48)]);
        let mut truth = Vec::new();
        let mut s = 2;
        truth.extend(std::iter::repeat_n(s, 3));
        while truth.len() < 180 {
            s = (s + 1) % 4;
            truth.extend(std::iter::repeat_n(s, m.states[s].mean as usize));
        }
        let em: Vec<Vec<f64>> = truth
            .iter()
            .map(|&t| (0..4).map(|k| if k == t { 0.0 } else { -3.0 }).collect())
            .collect();
        let path = viterbi_cyclic(&em, &m, &[0.25f64.ln(); 4]).unwrap();
        assert_eq!(path, truth);

        // shifting every emission by a constant does not move the decode
        let shifted: Vec<Vec<f64>> = em.iter().map(|r| r.iter().map(|v| v - 2.0).collect()).collect();
        assert_eq!(path, viterbi_cyclic(&shifted, &m, &[0.25f64.ln(); 4]).unwrap());
    }

    #[test]
    fn rejects_empty_and_infeasible() {
        let m = model(&[(2.0, 1.0, 2, 2), (2.0, 1.0, 2, 2)]);
        assert!(matches!(
            viterbi_cyclic(&[], &m, &[0.0, 0.0]),
            Err(Error::DecodeTooShort { .. })
        ));
    }
}
