//! Recordings, the dataset manifest, and rate conversion.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Processing rate every stage after loading assumes.
pub const PROCESSING_FS: f64 = 1000.0;

/// Recording source folder / sensor, a single letter `a`..=`f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Domain(char);

impl Domain {
    pub const ALL: [Domain; 6] = [
        Domain('a'),
        Domain('b'),
        Domain('c'),
        Domain('d'),
        Domain('e'),
        Domain('f'),
    ];

    pub fn new(c: char) -> Result<Self> {
        let c = c.to_ascii_lowercase();
        if ('a'..='f').contains(&c) {
            Ok(Domain(c))
        } else {
            Err(Error::InvalidInput(format!("unknown domain letter `{c}`")))
        }
    }

    pub fn letter(self) -> char {
        self.0
    }

    pub fn index(self) -> usize {
        (self.0 as u8 - b'a') as usize
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Domain::new(c),
            _ => Err(Error::InvalidInput(format!("unknown domain `{s}`"))),
        }
    }
}

impl TryFrom<String> for Domain {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Domain> for String {
    fn from(d: Domain) -> String {
        d.0.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Abnormal,
    Unknown,
}

impl Label {
    /// The other training class. `Unknown` maps to itself.
    pub fn opposite(self) -> Label {
        match self {
            Label::Normal => Label::Abnormal,
            Label::Abnormal => Label::Normal,
            Label::Unknown => Label::Unknown,
        }
    }

    /// Challenge reference encoding: -1 normal, 1 abnormal.
    pub fn from_code(code: &str) -> Option<Label> {
        match code.trim() {
            "-1" => Some(Label::Normal),
            "1" => Some(Label::Abnormal),
            _ => None,
        }
    }

    pub fn code(self) -> i8 {
        match self {
            Label::Normal => -1,
            Label::Abnormal => 1,
            Label::Unknown => 0,
        }
    }

    pub(crate) fn class_index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
            Label::Unknown => 2,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::Normal => "Normal",
            Label::Abnormal => "Abnormal",
            Label::Unknown => "Unknown",
        };
        f.write_str(s)
    }
}

/// One labeled recording.
#[derive(Clone, Debug, PartialEq)]
pub struct PcgRecord {
    pub record_id: String,
    pub domain: Domain,
    pub label: Label,
    pub fs: f64,
    pub samples: Vec<f64>,
}

impl PcgRecord {
    pub fn new(
        record_id: impl Into<String>,
        domain: Domain,
        label: Label,
        fs: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(Error::InvalidInput(format!("sample rate {fs} must be > 0")));
        }
        if samples.is_empty() {
            return Err(Error::Empty("record samples"));
        }
        Ok(PcgRecord {
            record_id: record_id.into(),
            domain,
            label,
            fs,
            samples,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn normalize(&mut self) {
        normalize(&mut self.samples);
    }
}

/// Scales `x` in place so that max |x| = 1. All-zero input is left untouched.
pub fn normalize(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        for v in x.iter_mut() {
            *v /= peak;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordDescriptor {
    pub record_id: String,
    /// Resolved against the manifest directory.
    pub path: PathBuf,
    pub domain: Domain,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub records: Vec<RecordDescriptor>,
    pub counts: BTreeMap<(Domain, Label), usize>,
}

impl DatasetIndex {
    pub fn from_records(records: Vec<RecordDescriptor>) -> Self {
        let mut counts = BTreeMap::new();
        for r in &records {
            *counts.entry((r.domain, r.label)).or_insert(0) += 1;
        }
        DatasetIndex { records, counts }
    }

    pub fn count(&self, domain: Domain, label: Label) -> usize {
        self.counts.get(&(domain, label)).copied().unwrap_or(0)
    }

    /// Domains present, ascending.
    pub fn domains(&self) -> Vec<Domain> {
        let mut d: Vec<Domain> = self.counts.keys().map(|(d, _)| *d).collect();
        d.dedup();
        d
    }
}

pub const MANIFEST_HEADER: &str = "record_id,path,domain,label";

/// Reads `record_id,path,domain,label` CSV. Paths are relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_start_matches('\u{feff}').trim() == MANIFEST_HEADER => {}
        Some((_, h)) => {
            return Err(parse_err(
                1,
                format!("header must be `{MANIFEST_HEADER}`, found `{h}`"),
            ))
        }
        None => return Err(parse_err(1, "missing header".into())),
    }

    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(parse_err(lineno, format!("expected 4 columns, found {}", cols.len())));
        }
        let domain: Domain = cols[2]
            .parse()
            .map_err(|_| parse_err(lineno, format!("unknown domain `{}`", cols[2])))?;
        let label = Label::from_code(cols[3])
            .ok_or_else(|| parse_err(lineno, format!("label `{}` not in {{-1, 1}}", cols[3])))?;
        records.push(RecordDescriptor {
            record_id: cols[0].to_string(),
            path: base.join(cols[1]),
            domain,
            label,
        });
    }
    Ok(DatasetIndex::from_records(records))
}

/// Writes a manifest; `rel_paths` are written verbatim in the path column.
pub fn write_manifest(path: &Path, rows: &[(String, String, Domain, Label)]) -> Result<()> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for (id, rel, domain, label) in rows {
        out.push_str(&format!("{id},{rel},{domain},{}\n", label.code()));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a mono 16-bit PCM WAV. Samples are scaled by 1/32768.
pub fn load_wav(path: &Path) -> Result<(f64, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes, path)
}

fn parse_wav(bytes: &[u8], path: &Path) -> Result<(f64, Vec<f64>)> {
    let not_wav = |field| Error::NotWav {
        path: path.to_path_buf(),
        field,
    };
    if bytes.len() < 12 {
        return Err(not_wav("riff_header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(not_wav("chunk_id"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(not_wav("format"));
    }

    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(pos + 4) as usize;
        let body = pos + 8;
        let end = body.saturating_add(size).min(bytes.len());
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(not_wav("fmt_chunk_size"));
                }
                fmt = Some((u16_at(body), u16_at(body + 2), u32_at(body + 4), u16_at(body + 14)));
            }
            b"data" => data = Some(&bytes[body..end]),
            _ => {}
        }
        // chunks are word-aligned
        pos = body.saturating_add(size).saturating_add(size & 1);
    }

    let (format, channels, fs, bits) = fmt.ok_or_else(|| not_wav("fmt_chunk"))?;
    if format != 1 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            code: format,
        });
    }
    if channels != 1 {
        return Err(Error::MultiChannel {
            path: path.to_path_buf(),
            channels,
        });
    }
    if bits != 16 {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            bits,
        });
    }
    if fs == 0 {
        return Err(not_wav("sample_rate"));
    }
    let data = data.ok_or_else(|| not_wav("data_chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok((fs as f64, samples))
}

/// Encodes samples as a canonical 44-byte-header mono 16-bit PCM WAV.
pub fn encode_wav(fs: u32, samples: &[f64]) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&fs.to_le_bytes());
    out.extend_from_slice(&(fs * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, fs: u32, samples: &[f64]) -> Result<()> {
    fs::write(path, encode_wav(fs, samples)).map_err(|e| Error::io(path, e))
}

/// Loads the WAV behind a descriptor, peak-normalizes it, and resamples to 1000 Hz.
pub fn load_record(desc: &RecordDescriptor) -> Result<PcgRecord> {
    let (fs, samples) = load_wav(&desc.path)?;
    let mut rec = PcgRecord::new(desc.record_id.clone(), desc.domain, desc.label, fs, samples)?;
    rec.normalize();
    if rec.fs != PROCESSING_FS {
        rec.samples = resample_to_rate(&rec.samples, rec.fs, PROCESSING_FS)?;
        rec.fs = PROCESSING_FS;
    }
    Ok(rec)
}

const RESAMPLE_HALF_TAPS: i64 = 32;

/// Band-limited rate conversion with a 64-tap Hann-windowed sinc kernel
/// (cutoff 0.45 × the lower of the two rates), centered on each output instant.
pub fn resample_to_rate(samples: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    if !(fs_in > 0.0 && fs_out > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sample rates must be > 0 (got {fs_in} -> {fs_out})"
        )));
    }
    if fs_in == fs_out {
        return Ok(samples.to_vec());
    }
    let n_in = samples.len() as i64;
    let n_out = (samples.len() as f64 * fs_out / fs_in).round() as usize;
    // normalized cutoff in cycles per input sample
    let fc = 0.45 * fs_in.min(fs_out) / fs_in;
    let half = RESAMPLE_HALF_TAPS as f64;

    let mut out = Vec::with_capacity(n_out);
    let mut weights: Vec<(usize, f64)> = Vec::with_capacity(2 * RESAMPLE_HALF_TAPS as usize);
    for n in 0..n_out {
        let p = n as f64 * fs_in / fs_out;
        let base = p.floor() as i64;
        weights.clear();
        let mut wsum = 0.0;
        let mut acc = 0.0;
        for j in (base - RESAMPLE_HALF_TAPS + 1)..=(base + RESAMPLE_HALF_TAPS) {
            if j < 0 || j >= n_in {
                continue;
            }
            let tau = p - j as f64;
            if tau.abs() >= half {
                continue;
            }
            let window = 0.5 * (1.0 + (std::f64::consts::PI * tau / half).cos());
            let arg = 2.0 * fc * tau;
            let sinc = if arg == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
            };
            let w = 2.0 * fc * sinc * window;
            wsum += w;
            acc += w * samples[j as usize];
        }
        out.push(if wsum != 0.0 { acc / wsum } else { 0.0 });
    }
    Ok(out)
}
