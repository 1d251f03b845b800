//! Fixed-length cardiac-cycle windows and their on-disk cache.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeartState, StateSequence};
use crate::dataset_io::{Domain, Label};
use crate::dsp_preprocess::BandStack;
use crate::error::{Error, Result};

pub const N_BANDS: usize = 4;
pub const CYCLE_LEN: usize = 2500;

const CACHE_MAGIC: &[u8; 4] = b"HSSG";
const CACHE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleConfig {
    /// Samples per window at 1000 Hz. The cache format and CNN input assume 2500.
    pub cycle_len: usize,
    /// A window running past the record end is kept if it holds at least this many real samples.
    pub min_real_samples: usize,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            cycle_len: CYCLE_LEN,
            min_real_samples: 500,
        }
    }
}

/// One 4-band window starting at an S1 onset.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleSegment {
    /// `4 × CYCLE_LEN`, row-major (band-major).
    pub data: Vec<f32>,
    pub record_id: String,
    pub domain: Domain,
    pub label: Label,
    pub cycle_start_index: usize,
}

impl CycleSegment {
    pub fn band(&self, b: usize) -> &[f32] {
        let l = self.data.len() / N_BANDS;
        &self.data[b * l..(b + 1) * l]
    }
}

/// Cuts one window per S1 onset (a Dia→S1 transition). States are held
/// across each 1000 Hz block of the feature rate.
pub fn extract_cycles(
    stack: &BandStack,
    seq: &StateSequence,
    record_id: &str,
    domain: Domain,
    label: Label,
    cfg: &CycleConfig,
) -> Result<Vec<CycleSegment>> {
    let factor = (stack.fs / seq.feature_rate).round() as usize;
    if factor == 0 || stack.bands.len() != N_BANDS {
        return Err(Error::InvalidInput("band stack and state sequence rates disagree".into()));
    }
    let n = stack.len();
    let onsets: Vec<usize> = seq
        .states
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] == HeartState::Dia && w[1] == HeartState::S1)
        .map(|(t, _)| (t + 1) * factor)
        .filter(|&s| s < n)
        .collect();
    if onsets.is_empty() {
        return Err(Error::NoS1Onset {
            record: record_id.to_string(),
        });
    }
    let l = cfg.cycle_len;
    Ok(onsets
        .into_iter()
        .filter(|&start| (n - start).min(l) >= cfg.min_real_samples.min(l))
        .map(|start| {
            let real = (n - start).min(l);
            let mut data = vec![0.0f32; N_BANDS * l];
            for (b, band) in stack.bands.iter().enumerate() {
                for (dst, &src) in data[b * l..b * l + real].iter_mut().zip(&band[start..start + real]) {
                    *dst = src as f32;
                }
            }
            CycleSegment {
                data,
                record_id: record_id.to_string(),
                domain,
                label,
                cycle_start_index: start,
            }
        })
        .collect())
}

/// `HSSG`, u32 version, u32 count, then per segment `4 × 2500` f32 LE and a u64 start index.
pub fn write_segment_cache(path: &Path, segments: &[CycleSegment]) -> Result<()> {
    let mut out = Vec::with_capacity(12 + segments.len() * (N_BANDS * CYCLE_LEN * 4 + 8));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(segments.len() as u32).to_le_bytes());
    for s in segments {
        if s.data.len() != N_BANDS * CYCLE_LEN {
            return Err(Error::ShapeMismatch {
                expected: format!("{}", N_BANDS * CYCLE_LEN),
                got: format!("{}", s.data.len()),
            });
        }
        for v in &s.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(s.cycle_start_index as u64).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a cache file into `(data, cycle_start_index)` pairs.
pub fn read_segment_cache(path: &Path) -> Result<Vec<(Vec<f32>, usize)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Cache {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 12 || &bytes[0..4] != CACHE_MAGIC {
        return Err(bad("missing HSSG magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let seg_bytes = N_BANDS * CYCLE_LEN * 4 + 8;
    if bytes.len() != 12 + count * seg_bytes {
        return Err(bad("length does not match segment count"));
    }
    Ok(bytes[12..]
        .chunks_exact(seg_bytes)
        .map(|chunk| {
            let (data, idx) = chunk.split_at(N_BANDS * CYCLE_LEN * 4);
            let data = data
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            (data, u64::from_le_bytes(idx.try_into().unwrap()) as usize)
        })
        .collect())
}
