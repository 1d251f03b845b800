//! Spike removal and four-band decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::Sos;

/// Analysis bands in Hz, low to high.
pub const BAND_EDGES: [(f64, f64); 4] = [(25.0, 45.0), (45.0, 80.0), (80.0, 200.0), (200.0, 400.0)];

/// Prototype order of each band-pass (applied forward and backward).
pub const BANDPASS_ORDER: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeConfig {
    pub window_s: f64,
    pub threshold: f64,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        SpikeConfig {
            window_s: 0.5,
            threshold: 3.0,
        }
    }
}

/// A recording split into the four analysis bands.
#[derive(Clone, Debug, PartialEq)]
pub struct BandStack {
    /// 4 rows, each as long as the input.
    pub bands: Vec<Vec<f64>>,
    pub band_edges: [(f64, f64); 4],
    pub fs: f64,
}

impl BandStack {
    pub fn len(&self) -> usize {
        self.bands.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn window_maa(w: &[f64]) -> f64 {
    w.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Iterative spike removal over non-overlapping windows (samples past the last
/// whole window are not examined). While the loudest window's maximum absolute
/// amplitude exceeds `threshold` × the median across windows, the span between
/// the zero-crossings around its peak is zeroed.
pub fn remove_spikes(x: &[f64], fs: f64, cfg: &SpikeConfig) -> Result<Vec<f64>> {
    let win = (cfg.window_s * fs).round() as usize;
    if win == 0 || x.len() < win {
        return Err(Error::SignalTooShort {
            len: x.len(),
            needed: win.max(1),
        });
    }
    let n_win = x.len() / win;
    let mut y = x.to_vec();
    let mut maa: Vec<f64> = (0..n_win).map(|w| window_maa(&y[w * win..(w + 1) * win])).collect();

    loop {
        let (loudest, &peak_maa) = maa
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("at least one window");
        if !(peak_maa > cfg.threshold * median(&maa)) {
            break;
        }
        let frame = &mut y[loudest * win..(loudest + 1) * win];
        let spike = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        // i is a crossing when sign(frame[i]) and sign(frame[i + 1]) are opposite
        let crossing = |i: usize| frame[i].signum() * frame[i + 1].signum() < 0.0;
        let start = (0..spike).rev().find(|&i| crossing(i)).unwrap_or(0);
        let end = (spike..win - 1).find(|&i| crossing(i)).unwrap_or(win - 1);
        for v in &mut frame[start..=end] {
            *v = 0.0;
        }
        maa[loudest] = window_maa(frame);
    }
    Ok(y)
}

/// Zero-phase Butterworth band-pass (order-2 prototype, forward-backward).
pub fn bandpass(x: &[f64], fs: f64, lo: f64, hi: f64) -> Result<Vec<f64>> {
    let sos = Sos::butter_bandpass(BANDPASS_ORDER, lo, hi, fs)?;
    Ok(sos.filtfilt(x))
}

/// Splits `x` into the four analysis bands. Bands are filtered concurrently and
/// assembled in fixed order.
pub fn decompose(x: &[f64], fs: f64) -> Result<BandStack> {
    if fs != crate::dataset_io::PROCESSING_FS {
        return Err(Error::InvalidInput(format!(
            "decompose expects fs = {} Hz, got {fs}",
            crate::dataset_io::PROCESSING_FS
        )));
    }
    use rayon::prelude::*;
    let bands = BAND_EDGES
        .par_iter()
        .map(|&(lo, hi)| bandpass(x, fs, lo, hi))
        .collect::<Result<Vec<_>>>()?;
    Ok(BandStack {
        bands,
        band_edges: BAND_EDGES,
        fs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use crate::filter::Sos;
    use std::f64::consts::PI;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    /// Steady-state amplitude gain: RMS ratio over the middle of a long run.
    pub(crate) fn measured_gain(f: f64, lo: f64, hi: f64) -> f64 {
        let fs = 1000.0;
        let n = 20_000;
        let x = sine(f, fs, n);
        let y = bandpass(&x, fs, lo, hi).unwrap();
        let trim = 5000;
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        rms(&y[trim..n - trim]) / rms(&x[trim..n - trim])
    }

    #[test]
    fn quiet_noise_untouched() {
        // bounded noise: every window's peak lies within a factor of 3 of the median
        let x: Vec<f64> = noise(5000, 1).iter().map(|v| v.clamp(-2.0, 2.0)).collect();
        let y = remove_spikes(&x, 1000.0, &SpikeConfig::default()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn injected_spike_removed() {
        let mut x = noise(5000, 2);
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        x[2222] = 20.0 * rms;
        let y = remove_spikes(&x, 1000.0, &SpikeConfig::default()).unwrap();
        assert_eq!(y.len(), x.len());
        let maa: Vec<f64> = y.chunks_exact(500).map(window_maa).collect();
        let max = maa.iter().cloned().fold(0.0, f64::max);
        assert!(max <= 3.0 * median(&maa));
        assert_eq!(y[2222], 0.0);
    }

    #[test]
    fn zero_signal_and_short_signal() {
        let y = remove_spikes(&[0.0; 1200], 1000.0, &SpikeConfig::default()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(matches!(
            remove_spikes(&[0.0; 499], 1000.0, &SpikeConfig::default()),
            Err(Error::SignalTooShort { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn spike_removal_never_amplifies(seed in 0u64..1000, spikes in proptest::collection::vec((0usize..3000, 1.0f64..50.0), 0..5)) {
            let mut x = noise(3000, seed);
            for (i, a) in spikes { x[i] = a; }
            let y = remove_spikes(&x, 1000.0, &SpikeConfig::default()).unwrap();
            let peak = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            prop_assert!(peak(&y) <= peak(&x));
        }

        #[test]
        fn bandpass_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let x = noise(2000, seed);
            let y = noise(2000, seed + 1);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = bandpass(&mix, 1000.0, 80.0, 200.0).unwrap();
            let fx = bandpass(&x, 1000.0, 80.0, 200.0).unwrap();
            let fy = bandpass(&y, 1000.0, 80.0, 200.0).unwrap();
            let scale = lhs.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn bandpass_gain_center_and_stopband() {
        for &(lo, hi) in &BAND_EDGES {
            let g = measured_gain((lo * hi).sqrt(), lo, hi);
            assert!((0.9..=1.01).contains(&g), "center gain {g} for {lo}-{hi}");
            let g = measured_gain(lo / 4.0, lo, hi);
            assert!(g <= 0.05, "lo/4 gain {g} for {lo}-{hi}");
        }
    }

    #[test]
    fn bandpass_zero_and_invalid() {
        let y = bandpass(&[0.0; 300], 1000.0, 25.0, 45.0).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(matches!(bandpass(&[0.0; 10], 1000.0, 45.0, 25.0), Err(Error::InvalidBand { .. })));
    }

    fn energy(v: &[f64]) -> f64 {
        v.iter().map(|a| a * a).sum()
    }

    #[test]
    fn decompose_routes_sines() {
        let z = decompose(&[0.0; 1000], 1000.0).unwrap();
        assert_eq!(z.bands.len(), 4);
        assert!(z.bands.iter().all(|b| b.len() == 1000 && b.iter().all(|&v| v == 0.0)));

        let s = decompose(&sine(60.0, 1000.0, 10_000), 1000.0).unwrap();
        assert!(energy(&s.bands[1]) >= 100.0 * energy(&s.bands[3]));

        let s = decompose(&sine(300.0, 1000.0, 10_000), 1000.0).unwrap();
        let e: Vec<f64> = s.bands.iter().map(|b| energy(b)).collect();
        assert!(e[3] > e[0] && e[3] > e[1] && e[3] > e[2], "{e:?}");

        assert!(decompose(&[0.0; 10], 2000.0).is_err());
    }

    /// Lag-0 normalized cross-correlation of two zero-phase outputs on white
    /// noise, from the cascaded magnitude responses: sum |H_i|^2 |H_j|^2 over
    /// the normalized energies.
    fn analytic_ncc(i: usize, j: usize) -> f64 {
        let sos: Vec<Sos> = BAND_EDGES
            .iter()
            .map(|&(lo, hi)| Sos::butter_bandpass(BANDPASS_ORDER, lo, hi, 1000.0).unwrap())
            .collect();
        let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
        for k in 1..50_000 {
            let f = k as f64 * 0.01;
            let a = sos[i].response(f, 1000.0).norm_sqr();
            let b = sos[j].response(f, 1000.0).norm_sqr();
            xy += a * b;
            xx += a * a;
            yy += b * b;
        }
        xy / (xx * yy).sqrt()
    }

    #[test]
    fn noise_cross_correlation_matches_analytic() {
        let x = noise(200_000, 9);
        let s = decompose(&x, 1000.0).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                let dot: f64 = s.bands[i].iter().zip(&s.bands[j]).map(|(a, b)| a * b).sum();
                let ncc = dot / (energy(&s.bands[i]) * energy(&s.bands[j])).sqrt();
                let want = analytic_ncc(i, j);
                assert!((ncc - want).abs() <= 0.02, "bands {i},{j}: {ncc} vs {want}");
            }
        }
    }

    // The 25-45 / 45-80 pair of an order-2 forward-backward design sits at
    // 0.208 analytically, so this bound cannot hold for that pair.
    #[test]
    #[ignore = "adjacent low bands overlap past 0.2 for this filter order"]
    fn decompose_bands_nearly_orthogonal_on_noise() {
        let x = noise(60_000, 9);
        let s = decompose(&x, 1000.0).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                let dot: f64 = s.bands[i].iter().zip(&s.bands[j]).map(|(a, b)| a * b).sum();
                let ncc = dot / (energy(&s.bands[i]) * energy(&s.bands[j])).sqrt();
                assert!(ncc.abs() <= 0.2, "bands {i},{j}: {ncc}");
            }
        }
    }
}
