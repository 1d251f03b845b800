//! Envelope features at the 50 Hz feature rate.

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};
use crate::filter::Sos;

pub const FEATURE_RATE: f64 = 50.0;
const LOG_FLOOR: f64 = 1e-6;
const HOMOMORPHIC_CUTOFF_HZ: f64 = 8.0;
const STD_FLOOR: f64 = 1e-9;

/// `exp(LPF(ln(|x| + 1e-6)))` with a first-order Butterworth low-pass at 8 Hz run forward and backward.
pub fn homomorphic_envelope(x: &[f64], fs: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("homomorphic_envelope input"));
    }
    let lpf = Sos::butter_lowpass(1, HOMOMORPHIC_CUTOFF_HZ, fs)?;
    let logs: Vec<f64> = x.iter().map(|v| (v.abs() + LOG_FLOOR).ln()).collect();
    Ok(lpf.filtfilt(&logs).into_iter().map(f64::exp).collect())
}

/// Magnitude of the FFT-based analytic signal.
pub fn hilbert_envelope(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Empty("hilbert_envelope input"));
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // keep DC (and Nyquist for even n), double positive, zero negative
    let half = n / 2;
    for (k, c) in buf.iter_mut().enumerate() {
        let keep_once = k == 0 || (n % 2 == 0 && k == half);
        if keep_once {
            continue;
        } else if k <= (n - 1) / 2 {
            *c *= 2.0;
        } else {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.norm() * scale).collect())
}

/// Frame-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub n_frames: usize,
    pub n_features: usize,
    /// `n_frames × n_features`, row-major.
    pub data: Vec<f64>,
}

impl Features {
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let n_features = columns.len();
        let n_frames = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_frames * n_features);
        for t in 0..n_frames {
            for c in columns {
                data.push(c[t]);
            }
        }
        Features {
            n_frames,
            n_features,
            data,
        }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_features..(t + 1) * self.n_features]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_frames).map(|t| self.data[t * self.n_features + j]).collect()
    }
}

/// Block-mean decimation by an integer factor; trailing partial block dropped.
pub fn mean_decimate(x: &[f64], factor: usize) -> Vec<f64> {
    x.chunks_exact(factor)
        .map(|c| c.iter().sum::<f64>() / factor as f64)
        .collect()
}

/// In-place z-normalization; a column with std below 1e-9 becomes all zeros.
pub fn z_normalize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in x.iter_mut() {
        *v = if std < STD_FLOOR { 0.0 } else { (*v - mean) / std };
    }
}

/// Homomorphic and Hilbert envelopes, mean-decimated to 50 Hz and z-normalized per record.
pub fn feature_matrix(x: &[f64], fs: f64) -> Result<Features> {
    if fs != crate::dataset_io::PROCESSING_FS {
        return Err(Error::InvalidInput(format!("feature_matrix expects 1000 Hz, got {fs}")));
    }
    if (x.len() as f64) < fs {
        return Err(Error::SignalTooShort {
            len: x.len(),
            needed: fs as usize,
        });
    }
    let factor = (fs / FEATURE_RATE).round() as usize;
    let mut columns = vec![
        mean_decimate(&homomorphic_envelope(x, fs)?, factor),
        mean_decimate(&hilbert_envelope(x)?, factor),
    ];
    for c in columns.iter_mut() {
        z_normalize(c);
    }
    Ok(Features::from_columns(&columns))
}
