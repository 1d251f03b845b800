//! Deterministic synthetic multi-domain PCG with ground-truth heart states.
//!
//! Each domain stands in for one stethoscope: the same cardiac generator is
//! passed through a sensor-specific band-pass coloration and noise floor.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset_io::{self, DatasetIndex, Domain, Label, PcgRecord, RecordDescriptor};
use crate::dsp_preprocess::bandpass;
use crate::error::{Error, Result};
use crate::rng;
use crate::segmentation::{format_annotations, HeartState, StateSequence, FEATURE_RATE};

/// Rate synthetic recordings are generated and stored at.
pub const SYNTH_FS: u32 = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthProfile {
    pub domain: Domain,
    pub coloration_center_hz: f64,
    pub coloration_width_hz: f64,
    pub noise_rms: f64,
    pub s1_freq_hz: f64,
    pub s1_duration_s: f64,
    pub s2_freq_hz: f64,
    pub s2_duration_s: f64,
    pub cycle_mean_s: f64,
    pub cycle_std_s: f64,
    pub murmur_band_hz: (f64, f64),
    /// Murmur RMS relative to the S1 burst peak amplitude.
    pub murmur_ratio: f64,
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        let lo = self.coloration_center_hz - self.coloration_width_hz / 2.0;
        let hi = self.coloration_center_hz + self.coloration_width_hz / 2.0;
        let freqs = [
            hi,
            self.s1_freq_hz,
            self.s2_freq_hz,
            self.murmur_band_hz.0,
            self.murmur_band_hz.1,
        ];
        let ok = lo > 0.0
            && freqs.iter().all(|&f| f > 0.0 && f < 500.0)
            && self.murmur_band_hz.0 < self.murmur_band_hz.1
            && self.s1_duration_s > 0.0
            && self.s2_duration_s > 0.0
            && (0.4..=1.5).contains(&self.cycle_mean_s)
            && self.cycle_std_s >= 0.0
            && self.noise_rms >= 0.0
            && self.murmur_ratio >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synth profile for domain {}", self.domain)))
        }
    }

    /// Built-in profile for each of the six domains.
    pub fn default_for(domain: Domain) -> SynthProfile {
        // (center, width, noise, s1 Hz, s2 Hz, cycle mean, murmur band, murmur ratio)
        let table: [(f64, f64, f64, f64, f64, f64, (f64, f64), f64); 6] = [
            (230.0, 420.0, 0.010, 60.0, 90.0, 0.85, (150.0, 350.0), 0.25),
            (170.0, 290.0, 0.025, 55.0, 85.0, 0.95, (140.0, 300.0), 0.30),
            (240.0, 360.0, 0.018, 65.0, 95.0, 0.80, (160.0, 350.0), 0.25),
            (200.0, 340.0, 0.030, 60.0, 100.0, 1.00, (150.0, 320.0), 0.30),
            (220.0, 400.0, 0.015, 58.0, 88.0, 0.90, (150.0, 350.0), 0.22),
            (190.0, 330.0, 0.020, 62.0, 92.0, 0.75, (170.0, 330.0), 0.28),
        ];
        let (center, width, noise, f1, f2, cycle, band, ratio) = table[domain.index()];
        SynthProfile {
            domain,
            coloration_center_hz: center,
            coloration_width_hz: width,
            noise_rms: noise,
            s1_freq_hz: f1,
            s1_duration_s: 0.12,
            s2_freq_hz: f2,
            s2_duration_s: 0.10,
            cycle_mean_s: cycle,
            cycle_std_s: 0.04,
            murmur_band_hz: band,
            murmur_ratio: ratio,
        }
    }
}

/// Ground-truth state intervals in seconds, as generated.
#[derive(Clone, Debug, PartialEq)]
pub struct Interval {
    pub state: HeartState,
    pub start_s: f64,
    pub duration_s: f64,
}

#[derive(Clone, Debug)]
pub struct SynthRecord {
    pub record: PcgRecord,
    pub truth: StateSequence,
    pub intervals: Vec<Interval>,
}

fn gaussian_burst(out: &mut [f64], fs: f64, start_s: f64, dur_s: f64, freq: f64, amp: f64, phase: f64) {
    let center = start_s + dur_s / 2.0;
    let sigma = dur_s / 5.0;
    let lo = ((start_s - dur_s / 2.0) * fs).floor().max(0.0) as usize;
    let hi = (((start_s + 1.5 * dur_s) * fs).ceil() as usize).min(out.len());
    for (i, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
        let t = i as f64 / fs - center;
        *v += amp * (-(t * t) / (2.0 * sigma * sigma)).exp() * (2.0 * PI * freq * t + phase).sin();
    }
}

/// One recording with its ground-truth states at 50 Hz.
pub fn gen_record(profile: &SynthProfile, class: Label, duration_s: f64, seed: u64) -> Result<SynthRecord> {
    profile.validate()?;
    if duration_s < 3.0 {
        return Err(Error::InvalidInput(format!("synthetic duration {duration_s} s < 3 s")));
    }
    if class == Label::Unknown {
        return Err(Error::InvalidInput("synthetic records need a class".into()));
    }
    let fs = SYNTH_FS as f64;
    let n = (duration_s * fs).round() as usize;
    let mut r = rng::stream(&[seed]);
    let cycle_dist = Normal::new(profile.cycle_mean_s, profile.cycle_std_s.max(1e-12)).unwrap();
    let clamp_lo = (profile.cycle_mean_s - 3.0 * profile.cycle_std_s).max(0.4);
    let clamp_hi = (profile.cycle_mean_s + 3.0 * profile.cycle_std_s).min(1.5);

    // timeline starts somewhere inside the first cycle
    let mut t = -r.random_range(0.0..profile.cycle_mean_s);
    let mut intervals = Vec::new();
    while t < duration_s {
        let cycle = cycle_dist.sample(&mut r).clamp(clamp_lo, clamp_hi);
        let jitter = |r: &mut rand_chacha::ChaCha8Rng, d: f64| d * (1.0 + 0.05 * r.random_range(-1.0..1.0));
        let s1 = jitter(&mut r, profile.s1_duration_s);
        let s2 = jitter(&mut r, profile.s2_duration_s);
        let sys = (0.3 * cycle - 0.02).max(0.08);
        let dia = (cycle - s1 - sys - s2).max(0.05);
        for (state, d) in [
            (HeartState::S1, s1),
            (HeartState::Sys, sys),
            (HeartState::S2, s2),
            (HeartState::Dia, dia),
        ] {
            intervals.push(Interval {
                state,
                start_s: t,
                duration_s: d,
            });
            t += d;
        }
    }

    let mut x = vec![0.0; n];
    for iv in &intervals {
        let (freq, amp) = match iv.state {
            HeartState::S1 => (profile.s1_freq_hz, 1.0),
            HeartState::S2 => (profile.s2_freq_hz, 0.8),
            _ => continue,
        };
        let amp = amp * (1.0 + 0.1 * r.random_range(-1.0..1.0));
        let freq = freq + r.random_range(-3.0..3.0);
        let phase = r.random_range(0.0..2.0 * PI);
        gaussian_burst(&mut x, fs, iv.start_s, iv.duration_s, freq, amp, phase);
    }

    if class == Label::Abnormal {
        let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let mut murmur = bandpass(&white, fs, profile.murmur_band_hz.0, profile.murmur_band_hz.1)?;
        let rms = (murmur.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
        murmur.iter_mut().for_each(|v| *v *= profile.murmur_ratio / rms);
        let taper = 0.01;
        for iv in intervals.iter().filter(|iv| iv.state == HeartState::Sys) {
            let lo = (iv.start_s * fs).max(0.0) as usize;
            let hi = (((iv.start_s + iv.duration_s) * fs) as usize).min(n);
            for i in lo..hi {
                let tt = i as f64 / fs - iv.start_s;
                let edge = tt.min(iv.duration_s - tt).max(0.0);
                let w = if edge >= taper { 1.0 } else { 0.5 * (1.0 - (PI * edge / taper).cos()) };
                x[i] += w * murmur[i];
            }
        }
    }

    let lo = profile.coloration_center_hz - profile.coloration_width_hz / 2.0;
    let hi = profile.coloration_center_hz + profile.coloration_width_hz / 2.0;
    let mut y = bandpass(&x, fs, lo, hi)?;
    for v in y.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut r);
        *v += profile.noise_rms * z;
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    y.iter_mut().for_each(|v| *v *= 0.9 / peak);

    let n_ticks = (duration_s * FEATURE_RATE).floor() as usize;
    let mut states = Vec::with_capacity(n_ticks);
    let mut k = 0;
    for i in 0..n_ticks {
        let tc = (i as f64 + 0.5) / FEATURE_RATE;
        while k + 1 < intervals.len() && intervals[k].start_s + intervals[k].duration_s <= tc {
            k += 1;
        }
        states.push(intervals[k].state);
    }

    let record = PcgRecord::new(String::new(), profile.domain, class, fs, y)?;
    Ok(SynthRecord {
        record,
        truth: StateSequence {
            states,
            feature_rate: FEATURE_RATE,
        },
        intervals,
    })
}

pub fn record_id(domain: Domain, class: Label, i: usize) -> String {
    let c = if class == Label::Normal { 'n' } else { 'a' };
    format!("{domain}{c}{i:04}")
}

/// Where a generated dataset landed.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub manifest: PathBuf,
    pub annotations: PathBuf,
    pub index: DatasetIndex,
}

/// Generates `counts[domain] = [normal, abnormal]` records per profile under
/// `out_dir`: `wav/<id>.wav`, `manifest.csv` and `annotations.csv`.
pub fn gen_dataset(
    profiles: &[SynthProfile],
    counts: &BTreeMap<Domain, [usize; 2]>,
    duration_s: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<SynthDataset> {
    use rayon::prelude::*;
    let mut jobs = Vec::new();
    for p in profiles {
        p.validate()?;
        let [nn, na] = counts.get(&p.domain).copied().unwrap_or([0, 0]);
        for (class, n) in [(Label::Normal, nn), (Label::Abnormal, na)] {
            for i in 0..n {
                jobs.push((p, class, i));
            }
        }
    }
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let generated = jobs
        .par_iter()
        .map(|&(p, class, i)| {
            let rec_seed = rng::keyed(&[seed, p.domain.index() as u64, class.class_index() as u64, i as u64]);
            let mut s = gen_record(p, class, duration_s, rec_seed)?;
            s.record.record_id = record_id(p.domain, class, i);
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(generated.len());
    let mut descriptors = Vec::with_capacity(generated.len());
    for s in &generated {
        let rel = format!("wav/{}.wav", s.record.record_id);
        let path = out_dir.join(&rel);
        dataset_io::write_wav(&path, SYNTH_FS, &s.record.samples)?;
        rows.push((s.record.record_id.clone(), rel, s.record.domain, s.record.label));
        descriptors.push(RecordDescriptor {
            record_id: s.record.record_id.clone(),
            path,
            domain: s.record.domain,
            label: s.record.label,
        });
    }
    let manifest = out_dir.join("manifest.csv");
    dataset_io::write_manifest(&manifest, &rows)?;
    let annotations = out_dir.join("annotations.csv");
    let text = format_annotations(
        generated
            .iter()
            .map(|s| (s.record.record_id.as_str(), s.truth.states.as_slice())),
    );
    fs::write(&annotations, text).map_err(|e| Error::io(&annotations, e))?;

    Ok(SynthDataset {
        manifest,
        annotations,
        index: DatasetIndex::from_records(descriptors),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prof(c: char) -> SynthProfile {
        SynthProfile::default_for(Domain::new(c).unwrap())
    }

    #[test]
    fn records_are_deterministic() {
        let a = gen_record(&prof('a'), Label::Abnormal, 4.0, 17).unwrap();
        let b = gen_record(&prof('a'), Label::Abnormal, 4.0, 17).unwrap();
        assert_eq!(a.record.samples, b.record.samples);
        assert_eq!(a.truth, b.truth);
        let c = gen_record(&prof('a'), Label::Abnormal, 4.0, 18).unwrap();
        assert_ne!(a.record.samples, c.record.samples);
    }

    fn band_rms_ratio(s: &SynthRecord, p: &SynthProfile) -> f64 {
        let fs = SYNTH_FS as f64;
        let y = bandpass(&s.record.samples, fs, p.murmur_band_hz.0, p.murmur_band_hz.1).unwrap();
        let mut acc = [(0.0, 0usize); 2];
        for iv in &s.intervals {
            let slot = match iv.state {
                HeartState::Sys => 0,
                HeartState::Dia => 1,
                _ => continue,
            };
            let lo = (iv.start_s * fs).max(0.0) as usize;
            let hi = (((iv.start_s + iv.duration_s) * fs) as usize).min(y.len());
            for v in &y[lo.min(hi)..hi] {
                acc[slot].0 += v * v;
                acc[slot].1 += 1;
            }
        }
        ((acc[0].0 / acc[0].1 as f64) / (acc[1].0 / acc[1].1 as f64)).sqrt()
    }

    #[test]
    fn murmur_only_in_abnormal_systole() {
        for c in ['a', 'b', 'c', 'd', 'e', 'f'] {
            let p = prof(c);
            let normal = gen_record(&p, Label::Normal, 8.0, 1).unwrap();
            let abnormal = gen_record(&p, Label::Abnormal, 8.0, 1).unwrap();
            let rn = band_rms_ratio(&normal, &p);
            let ra = band_rms_ratio(&abnormal, &p);
            assert!(rn <= 3.0, "{c}: normal ratio {rn}");
            assert!(ra >= 3.0, "{c}: abnormal ratio {ra}");
        }
    }

    #[test]
    fn truth_is_cyclic_and_in_distribution() {
        let p = prof('b');
        let s = gen_record(&p, Label::Normal, 20.0, 5).unwrap();
        assert!(s.truth.is_cyclic());
        assert_eq!(s.truth.states.len(), 1000);
        let cycles: Vec<f64> = s
            .intervals
            .chunks_exact(4)
            .map(|c| c.iter().map(|i| i.duration_s).sum())
            .collect();
        for c in cycles {
            assert!((c - p.cycle_mean_s).abs() <= 4.0 * p.cycle_std_s + 1e-9);
        }
        for iv in s.intervals.iter().filter(|i| i.state == HeartState::S1) {
            assert!((iv.duration_s - p.s1_duration_s).abs() <= 4.0 * 0.05 * p.s1_duration_s);
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(gen_record(&prof('a'), Label::Normal, 2.0, 0).is_err());
        let mut p = prof('a');
        p.s1_freq_hz = 600.0;
        assert!(gen_record(&p, Label::Normal, 5.0, 0).is_err());
    }

    #[test]
    fn dataset_layout_and_reproducibility() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let profiles = [prof('a'), prof('c')];
        let counts: BTreeMap<Domain, [usize; 2]> =
            profiles.iter().map(|p| (p.domain, [3, 2])).collect();
        let ds = gen_dataset(&profiles, &counts, 4.0, 9, d1.path()).unwrap();
        gen_dataset(&profiles, &counts, 4.0, 9, d2.path()).unwrap();
        let idx = dataset_io::load_manifest(&ds.manifest).unwrap();
        assert_eq!(idx.records.len(), 10);
        assert_eq!(idx.count(Domain::new('c').unwrap(), Label::Normal), 3);
        assert_eq!(idx.count(Domain::new('c').unwrap(), Label::Abnormal), 2);
        for name in ["manifest.csv", "annotations.csv", "wav/an0001.wav", "wav/ca0001.wav"] {
            assert_eq!(fs::read(d1.path().join(name)).unwrap(), fs::read(d2.path().join(name)).unwrap());
        }
        // WAVs round-trip through the loader unchanged
        let wav = d1.path().join("wav/an0002.wav");
        let (fs_in, samples) = dataset_io::load_wav(&wav).unwrap();
        assert_eq!(dataset_io::encode_wav(fs_in as u32, &samples), fs::read(&wav).unwrap());
    }
}
