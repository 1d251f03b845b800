//! Heart-cycle segmentation: envelope features, logistic emissions,
//! heart-rate-conditioned durations, HSMM decoding and cycle windows.

mod cycles;
mod emission;
mod features;
mod hsmm;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cycles::{
    extract_cycles, read_segment_cache, write_segment_cache, CycleConfig, CycleSegment, CYCLE_LEN,
    N_BANDS,
};
pub use emission::{fit_emission, EmissionModel};
pub use features::{
    feature_matrix, hilbert_envelope, homomorphic_envelope, mean_decimate, z_normalize, Features,
    FEATURE_RATE,
};
pub use hsmm::{runs, viterbi_cyclic, DurationDensity, DurationModel};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeartState {
    S1,
    Sys,
    S2,
    Dia,
}

impl HeartState {
    pub const ALL: [HeartState; 4] = [HeartState::S1, HeartState::Sys, HeartState::S2, HeartState::Dia];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> HeartState {
        HeartState::ALL[(self.index() + 1) % 4]
    }

    pub fn name(self) -> &'static str {
        match self {
            HeartState::S1 => "S1",
            HeartState::Sys => "Sys",
            HeartState::S2 => "S2",
            HeartState::Dia => "Dia",
        }
    }

    pub fn parse(s: &str) -> Option<HeartState> {
        HeartState::ALL.into_iter().find(|h| h.name() == s.trim())
    }
}

impl fmt::Display for HeartState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateSequence {
    pub states: Vec<HeartState>,
    pub feature_rate: f64,
}

impl StateSequence {
    /// True when every state change follows S1→Sys→S2→Dia→S1.
    pub fn is_cyclic(&self) -> bool {
        self.states.windows(2).all(|w| w[0] == w[1] || w[1] == w[0].next())
    }

    /// Fraction of frames equal to `truth` over the common length.
    pub fn accuracy(&self, truth: &[HeartState]) -> f64 {
        let n = self.states.len().min(truth.len());
        if n == 0 {
            return 0.0;
        }
        let hits = self.states.iter().zip(truth).filter(|(a, b)| a == b).count();
        hits as f64 / n as f64
    }
}

/// Heart-rate-derived timing in feature-rate ticks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeartRate {
    pub cycle_ticks: usize,
    /// S1 onset to S2 onset.
    pub systole_ticks: usize,
    pub low_confidence: bool,
}

const CYCLE_LAGS: (usize, usize) = (25, 100);
const SYSTOLE_MIN_LAG: usize = 10;
const MIN_ENVELOPE_TICKS: usize = 150;

/// Cycle and systolic interval from the envelope's autocorrelation.
pub fn estimate_heart_rate(env: &[f64]) -> Result<HeartRate> {
    if env.len() < MIN_ENVELOPE_TICKS {
        return Err(Error::SignalTooShort {
            len: env.len(),
            needed: MIN_ENVELOPE_TICKS,
        });
    }
    let n = env.len();
    let mean = env.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = env.iter().map(|v| v - mean).collect();
    let acf = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum()
    };
    let energy = acf(0);
    let argmax = |lo: usize, hi: usize| -> (usize, f64) {
        (lo..=hi).map(|l| (l, acf(l))).fold((lo, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        })
    };

    let (cycle, peak) = argmax(CYCLE_LAGS.0, CYCLE_LAGS.1.min(n - 1));
    let sys_hi = (cycle / 2).max(SYSTOLE_MIN_LAG);
    let (systole, _) = argmax(SYSTOLE_MIN_LAG, sys_hi);
    Ok(HeartRate {
        cycle_ticks: cycle,
        systole_ticks: systole,
        low_confidence: !(energy > 0.0) || peak <= 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DurationConfig {
    pub s1_mean_s: f64,
    pub s2_mean_s: f64,
    pub std_fraction: f64,
    pub min_duration_s: f64,
    pub max_duration_factor: f64,
}

impl Default for DurationConfig {
    fn default() -> Self {
        DurationConfig {
            s1_mean_s: 0.12,
            s2_mean_s: 0.10,
            std_fraction: 0.25,
            min_duration_s: 0.04,
            max_duration_factor: 2.0,
        }
    }
}

impl DurationModel {
    /// Gaussian durations for S1, Sys, S2, Dia given an estimated heart rate.
    pub fn from_heart_rate(hr: &HeartRate, cfg: &DurationConfig, rate: f64) -> DurationModel {
        let min = (cfg.min_duration_s * rate).round().max(1.0);
        let s1 = (cfg.s1_mean_s * rate).max(min);
        let s2 = (cfg.s2_mean_s * rate).max(min);
        let sys = (hr.systole_ticks as f64 - s1).max(min);
        let dia = (hr.cycle_ticks as f64 - hr.systole_ticks as f64 - s2).max(min);
        let density = |mean: f64| DurationDensity {
            mean,
            std: (cfg.std_fraction * mean).max(0.5),
            min: min as usize,
            max: (cfg.max_duration_factor * mean).ceil().max(min) as usize,
        };
        DurationModel {
            states: vec![density(s1), density(sys), density(s2), density(dia)],
        }
    }
}

/// Decodes the S1/Sys/S2/Dia sequence of a feature matrix.
pub fn hsmm_viterbi(
    features: &Features,
    emission: &EmissionModel,
    durations: &DurationModel,
) -> Result<StateSequence> {
    if durations.states.len() != 4 {
        return Err(Error::InvalidInput("duration model must have 4 states".into()));
    }
    let em = emission.log_emissions(features)?;
    let path = viterbi_cyclic(&em, durations, &[0.25f64.ln(); 4])?;
    Ok(StateSequence {
        states: path.into_iter().map(|s| HeartState::ALL[s]).collect(),
        feature_rate: FEATURE_RATE,
    })
}

/// Band the envelopes are taken from. It holds S1 and S2 and leaves out
/// most high-frequency murmur energy.
pub const SEGMENTATION_BAND: (f64, f64) = (25.0, 120.0);

/// Features used for segmentation, from [`SEGMENTATION_BAND`] of the cleaned signal.
pub fn segmentation_features(cleaned: &[f64], fs: f64) -> Result<Features> {
    let band = crate::dsp_preprocess::bandpass(cleaned, fs, SEGMENTATION_BAND.0, SEGMENTATION_BAND.1)?;
    feature_matrix(&band, fs)
}

/// Full segmentation of a cleaned 1000 Hz signal.
pub fn segment_signal(
    cleaned: &[f64],
    fs: f64,
    emission: &EmissionModel,
    cfg: &DurationConfig,
) -> Result<(StateSequence, HeartRate)> {
    let features = segmentation_features(cleaned, fs)?;
    let hr = estimate_heart_rate(&features.column(0))?;
    let durations = DurationModel::from_heart_rate(&hr, cfg, FEATURE_RATE);
    Ok((hsmm_viterbi(&features, emission, &durations)?, hr))
}

pub const ANNOTATION_HEADER: &str = "record_id,tick,state";

/// Reads `record_id,tick,state` rows into per-record sequences ordered by tick.
pub fn read_annotations(path: &Path) -> Result<BTreeMap<String, Vec<HeartState>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == ANNOTATION_HEADER => {}
        _ => return Err(err(1, format!("header must be `{ANNOTATION_HEADER}`"))),
    }
    let mut raw: BTreeMap<String, BTreeMap<usize, HeartState>> = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(err(i + 1, format!("expected 3 columns, found {}", cols.len())));
        }
        let tick: usize = cols[1]
            .trim()
            .parse()
            .map_err(|_| err(i + 1, format!("bad tick `{}`", cols[1])))?;
        let state = HeartState::parse(cols[2]).ok_or_else(|| err(i + 1, format!("bad state `{}`", cols[2])))?;
        raw.entry(cols[0].trim().to_string()).or_default().insert(tick, state);
    }
    raw.into_iter()
        .map(|(id, ticks)| {
            if ticks.keys().enumerate().any(|(i, &t)| i != t) {
                return Err(err(0, format!("record {id}: ticks are not contiguous from 0")));
            }
            Ok((id, ticks.into_values().collect()))
        })
        .collect()
}

pub fn format_annotations<'a>(rows: impl IntoIterator<Item = (&'a str, &'a [HeartState])>) -> String {
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for (id, states) in rows {
        for (t, s) in states.iter().enumerate() {
            out.push_str(&format!("{id},{t},{s}\n"));
        }
    }
    out
}
