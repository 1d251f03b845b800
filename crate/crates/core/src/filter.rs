//! Butterworth IIR design (bilinear transform) and zero-phase second-order-section filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = 1.0 + z_inv * (self.a[0] + z_inv * self.a[1]);
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    fn is_first_order(&self) -> bool {
        self.b[2] == 0.0 && self.a[1] == 0.0
    }
}

/// Cascade of biquads.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

fn prototype_poles(order: usize) -> Vec<Complex64> {
    // left-half-plane Butterworth poles on the unit circle
    (0..order)
        .map(|k| {
            let m = -(order as f64) + 1.0 + 2.0 * k as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * order as f64))
        })
        .collect()
}

fn warp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let fs2 = 2.0 * fs;
    (fs2 + s) / (fs2 - s)
}

/// Groups digital poles into sections: conjugate pairs first, lone real poles last.
fn pole_sections(poles: &[Complex64]) -> Vec<[f64; 2]> {
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let mut out: Vec<[f64; 2]> = complex
        .iter()
        .map(|p| [-2.0 * p.re, p.norm_sqr()])
        .collect();
    let reals: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= 1e-12)
        .map(|p| p.re)
        .collect();
    for chunk in reals.chunks(2) {
        match chunk {
            [p] => out.push([-p, 0.0]),
            [p, q] => out.push([-(p + q), p * q]),
            _ => unreachable!(),
        }
    }
    out
}

impl Sos {
    /// Complex frequency response at `f` Hz.
    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    fn normalize_gain_at(&mut self, f: f64, fs: f64) {
        let g = self.response(f, fs).norm();
        if let Some(first) = self.sections.first_mut() {
            for b in first.b.iter_mut() {
                *b /= g;
            }
        }
    }

    /// Butterworth low-pass of the given prototype order.
    pub fn butter_lowpass(order: usize, fc: f64, fs: f64) -> Result<Sos> {
        if order == 0 || !(fc > 0.0 && fc < fs / 2.0) {
            return Err(Error::InvalidBand { lo: 0.0, hi: fc, fs });
        }
        let wc = warp(fc, fs);
        let poles: Vec<Complex64> = prototype_poles(order)
            .into_iter()
            .map(|p| bilinear(p * wc, fs))
            .collect();
        let sections = pole_sections(&poles)
            .into_iter()
            .map(|a| {
                let b = if a[1] == 0.0 { [1.0, 1.0, 0.0] } else { [1.0, 2.0, 1.0] };
                Biquad { b, a }
            })
            .collect();
        let mut sos = Sos { sections };
        sos.normalize_gain_at(0.0, fs);
        Ok(sos)
    }

    /// Butterworth band-pass built from an order-`order` low-pass prototype
    /// (`2 * order` poles).
    pub fn butter_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Sos> {
        if order == 0 || !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
            return Err(Error::InvalidBand { lo, hi, fs });
        }
        let (w1, w2) = (warp(lo, fs), warp(hi, fs));
        let w0 = (w1 * w2).sqrt();
        let bw = w2 - w1;
        let mut analog = Vec::with_capacity(2 * order);
        for p in prototype_poles(order) {
            let pl = p * (bw / 2.0);
            let root = (pl * pl - w0 * w0).sqrt();
            analog.push(pl + root);
            analog.push(pl - root);
        }
        let poles: Vec<Complex64> = analog.into_iter().map(|s| bilinear(s, fs)).collect();
        let sections = pole_sections(&poles)
            .into_iter()
            .map(|a| Biquad {
                b: [1.0, 0.0, -1.0],
                a,
            })
            .collect();
        let mut sos = Sos { sections };
        // digital image of the analog center frequency
        let f0 = fs / PI * (w0 / (2.0 * fs)).atan();
        sos.normalize_gain_at(f0, fs);
        Ok(sos)
    }

    /// Steady-state initial conditions for a unit step input, per section.
    fn step_zi(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let g = s.dc_gain();
                let z2 = s.b[2] - s.a[1] * g;
                let z1 = s.b[1] - s.a[0] * g + z2;
                let zi = [scale * z1, scale * z2];
                scale *= g;
                zi
            })
            .collect()
    }

    /// Causal filtering (direct form II transposed), optionally from initial state.
    pub fn filter(&self, x: &[f64], zi: Option<&[[f64; 2]]>) -> Vec<f64> {
        let mut y = x.to_vec();
        for (i, s) in self.sections.iter().enumerate() {
            let [mut z1, mut z2] = zi.map_or([0.0, 0.0], |z| z[i]);
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            for v in y.iter_mut() {
                let xin = *v;
                let out = b0 * xin + z1;
                z1 = b1 * xin - a1 * out + z2;
                z2 = b2 * xin - a2 * out;
                *v = out;
            }
        }
        y
    }

    fn pad_len(&self) -> usize {
        let first_order = self.sections.iter().filter(|s| s.is_first_order()).count();
        3 * (2 * self.sections.len() + 1 - first_order)
    }

    /// Zero-phase forward-backward filtering with odd reflection padding and
    /// steady-state initial conditions. Output length equals input length.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad_len().min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (x[0], x[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

        let zi = self.step_zi();
        let scaled = |v: f64| -> Vec<[f64; 2]> { zi.iter().map(|z| [z[0] * v, z[1] * v]).collect() };

        let mut y = self.filter(&ext, Some(&scaled(ext[0])));
        y.reverse();
        let mut y = self.filter(&y, Some(&scaled(y[0])));
        y.reverse();
        y.drain(..pad);
        y.truncate(n);
        y
    }
}
