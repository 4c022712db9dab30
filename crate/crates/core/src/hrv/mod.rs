//! Heart-rate-variability features from PPG peaks.

mod fft;
mod peaks;

pub use peaks::{detect_peaks, detect_peaks_with, PeakConfig, PeakTrain};

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum HrvError {
    #[error("burst too short for peak detection")]
    TooShort,
    #[error("no raise level produced a heart rate in the plausible band")]
    NoPlausiblePeaks,
    #[error("fewer than 5 plausible NN intervals")]
    TooFewIntervals,
    #[error("NN series spans less than 30 s")]
    InsufficientSpan,
    #[error("NN values and timestamps differ in length")]
    LengthMismatch,
}

pub const NN_MIN_MS: f64 = 300.0;
pub const NN_MAX_MS: f64 = 2000.0;
pub const MIN_INTERVALS: usize = 5;

/// HRV feature columns, in matrix order.
pub const HRV_FEATURES: [&str; 12] = [
    "bpm", "ibi", "sdnn", "sdsd", "rmssd", "pnn20", "pnn50", "hr_mad", "sd1", "sd2", "s", "br",
];

pub(crate) fn nn_plausible(nn: f64) -> bool {
    (NN_MIN_MS..=NN_MAX_MS).contains(&nn)
}

/// Cleaned NN intervals with the time of each interval's closing beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnSeries {
    pub nn_ms: Vec<f64>,
    pub times_ms: Vec<f64>,
    pub quality: f64,
}

/// Successive peak differences, keeping those in `[300, 2000]` ms.
pub fn clean_nn(peaks: &PeakTrain) -> Result<NnSeries, HrvError> {
    let t = &peaks.peak_times_ms;
    if t.len() < 2 {
        return Err(HrvError::TooFewIntervals);
    }
    let total = t.len() - 1;
    let (nn_ms, times_ms): (Vec<f64>, Vec<f64>) = t
        .windows(2)
        .map(|w| (w[1] - w[0], w[1]))
        .filter(|(d, _)| nn_plausible(*d))
        .unzip();
    if nn_ms.len() < MIN_INTERVALS {
        return Err(HrvError::TooFewIntervals);
    }
    let quality = nn_ms.len() as f64 / total as f64;
    Ok(NnSeries {
        nn_ms,
        times_ms,
        quality,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvFeatures {
    pub bpm: f64,
    pub ibi: f64,
    pub sdnn: f64,
    pub sdsd: f64,
    pub rmssd: f64,
    pub pnn20: f64,
    pub pnn50: f64,
    pub hr_mad: f64,
    pub sd1: f64,
    pub sd2: f64,
    pub s: f64,
    /// Missing when the NN series is too short for a spectral estimate.
    pub br: Option<f64>,
}

impl HrvFeatures {
    /// Values in [`HRV_FEATURES`] order.
    pub fn to_array(&self) -> [Option<f64>; 12] {
        [
            Some(self.bpm),
            Some(self.ibi),
            Some(self.sdnn),
            Some(self.sdsd),
            Some(self.rmssd),
            Some(self.pnn20),
            Some(self.pnn50),
            Some(self.hr_mad),
            Some(self.sd1),
            Some(self.sd2),
            Some(self.s),
            self.br,
        ]
    }
}

/// Time-domain and Poincaré features of an NN series.
///
fn next_up(x: f64, steps: i64) -> f64 {
    f64::from_bits((x.to_bits() as i64 + steps) as u64)
}

/// Returns `(60000 / ibi, ibi)` nudged so that their product rounds to
/// exactly 60000. Single-ulp steps can lock onto the same rounding error when
/// both mantissas are close, hence the quadratic offsets.
fn rate_pair(ibi: f64) -> (f64, f64) {
    if !(ibi.is_finite() && ibi > 0.0) {
        return (60_000.0 / ibi, ibi);
    }
    for k in 0..400i64 {
        let j = k / 2;
        let i = next_up(ibi, if k % 2 == 0 { j * j } else { -j * j });
        let b0 = 60_000.0 / i;
        for db in [0i64, 1, -1] {
            let b = next_up(b0, db);
            if b * i == 60_000.0 {
                return (b, i);
            }
        }
    }
    (60_000.0 / ibi, ibi)
}

/// All spreads are population statistics; `sd1` and `sd2` come from the
/// variance identities `sd1² = var(d)/2` and `sd2² = 2 var(NN) - var(d)/2`.
pub fn hrv_features(nn: &[f64], nn_times: &[f64]) -> Result<HrvFeatures, HrvError> {
    if nn.len() != nn_times.len() {
        return Err(HrvError::LengthMismatch);
    }
    if nn.len() < MIN_INTERVALS {
        return Err(HrvError::TooFewIntervals);
    }
    let (bpm, ibi) = rate_pair(stats::mean(nn));
    let var_nn = stats::variance(nn);
    let d: Vec<f64> = nn.windows(2).map(|w| w[1] - w[0]).collect();
    let var_d = stats::variance(&d);
    let rmssd = libm::sqrt(d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64);
    let frac = |limit: f64| d.iter().filter(|x| x.abs() > limit).count() as f64 / d.len() as f64;
    let med = stats::median(nn);
    let abs_dev: Vec<f64> = nn.iter().map(|x| (x - med).abs()).collect();
    let sd1 = libm::sqrt(var_d / 2.0);
    let sd2 = libm::sqrt((2.0 * var_nn - var_d / 2.0).max(0.0));
    let br = estimate_br(nn, nn_times).ok().map(|b| b.rate);
    Ok(HrvFeatures {
        bpm,
        ibi,
        sdnn: libm::sqrt(var_nn),
        sdsd: libm::sqrt(var_d),
        rmssd,
        pnn20: frac(20.0),
        pnn50: frac(50.0),
        hr_mad: stats::median(&abs_dev),
        sd1,
        sd2,
        s: PI * sd1 * sd2,
        br,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreathingEstimate {
    /// Breaths per minute.
    pub rate: f64,
    /// False when the spectral peak is under three times the median bin.
    pub confident: bool,
}

pub const BR_RESAMPLE_HZ: f64 = 4.0;
pub const BR_BAND_HZ: (f64, f64) = (0.1, 0.4);
const MIN_BR_SPAN_MS: f64 = 30_000.0;

/// Breathing rate from respiratory modulation of the NN series.
///
/// The series is linearly interpolated onto a 4 Hz grid, de-meaned, Hann
/// windowed and zero-padded; the strongest bin in 0.1-0.4 Hz gives the rate.
pub fn estimate_br(nn: &[f64], nn_times: &[f64]) -> Result<BreathingEstimate, HrvError> {
    if nn.len() != nn_times.len() {
        return Err(HrvError::LengthMismatch);
    }
    if nn.len() < 2 || nn_times[nn.len() - 1] - nn_times[0] < MIN_BR_SPAN_MS {
        return Err(HrvError::InsufficientSpan);
    }
    let step = 1000.0 / BR_RESAMPLE_HZ;
    let t0 = nn_times[0];
    let n = libm::floor((nn_times[nn.len() - 1] - t0) / step) as usize + 1;
    let mut grid = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let t = t0 + i as f64 * step;
        while seg + 2 < nn_times.len() && nn_times[seg + 1] < t {
            seg += 1;
        }
        let (ta, tb) = (nn_times[seg], nn_times[seg + 1]);
        let f = if tb > ta { ((t - ta) / (tb - ta)).clamp(0.0, 1.0) } else { 0.0 };
        grid.push(nn[seg] + f * (nn[seg + 1] - nn[seg]));
    }
    let m = stats::mean(&grid);
    let nfft = n.next_power_of_two().max(2048);
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let denom = (n.max(2) - 1) as f64;
    for (i, v) in grid.iter().enumerate() {
        let hann = 0.5 * (1.0 - libm::cos(2.0 * PI * i as f64 / denom));
        buf[i] = Complex64::new((v - m) * hann, 0.0);
    }
    fft::fft(&mut buf);
    let mags: Vec<f64> = buf[..=nfft / 2].iter().map(|c| c.norm()).collect();
    let df = BR_RESAMPLE_HZ / nfft as f64;
    let lo = libm::ceil(BR_BAND_HZ.0 / df) as usize;
    let hi = (libm::floor(BR_BAND_HZ.1 / df) as usize).min(mags.len() - 1);
    let mut peak = lo;
    for k in lo..=hi {
        if mags[k] > mags[peak] {
            peak = k;
        }
    }
    let floor = stats::median(&mags);
    Ok(BreathingEstimate {
        rate: 60.0 * peak as f64 * df,
        confident: mags[peak] > 0.0 && mags[peak] >= 3.0 * floor,
    })
}

/// Peaks → NN → features for one cleaned burst.
pub fn features_from_peaks(peaks: &PeakTrain) -> Result<HrvFeatures, HrvError> {
    let nn = clean_nn(peaks)?;
    hrv_features(&nn.nn_ms, &nn.times_ms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_pair_is_exact() {
        let mut state = 0x9E37_79B9_7F4A_7C15u64;
        for _ in 0..200_000 {
            state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1);
            let ibi = 200.0 + 2800.0 * (state >> 11) as f64 / (1u64 << 53) as f64;
            let (b, i) = rate_pair(ibi);
            assert_eq!(b * i, 60_000.0, "{ibi}");
            assert!((i - ibi).abs() <= 1e-11 * ibi);
            assert!((b - 60_000.0 / ibi).abs() <= 1e-11 * b);
        }
    }

    fn times(nn: &[f64]) -> Vec<f64> {
        nn.iter()
            .scan(0.0, |t, x| {
                *t += x;
                Some(*t)
            })
            .collect()
    }

    fn train(times: Vec<f64>) -> PeakTrain {
        PeakTrain {
            peak_indices: (0..times.len()).collect(),
            peak_times_ms: times,
            raise_level: 5,
            quality: 1.0,
        }
    }

    #[test]
    fn constant_series() {
        let nn = [800.0; 10];
        let f = hrv_features(&nn, &times(&nn)).unwrap();
        assert_eq!(f.bpm, 75.0);
        assert_eq!(f.sdnn, 0.0);
        assert_eq!(f.rmssd, 0.0);
        assert_eq!(f.pnn20, 0.0);
        assert_eq!(f.sd1, 0.0);
        assert_eq!(f.s, 0.0);
    }

    #[test]
    fn alternating_series() {
        let nn = [700.0, 800.0, 700.0, 800.0, 700.0];
        let f = hrv_features(&nn, &times(&nn)).unwrap();
        assert_eq!(f.ibi, 740.0);
        assert_eq!(f.rmssd, 100.0);
        assert_eq!(f.sdsd, 100.0);
        assert_eq!(f.pnn50, 1.0);
        assert_eq!(f.pnn20, 1.0);
        assert_eq!(f.hr_mad, 0.0);
        assert_eq!(f.s, PI * f.sd1 * f.sd2);
        assert!(f.br.is_none());
    }

    #[test]
    fn too_few_intervals() {
        let nn = [800.0; 4];
        assert_eq!(hrv_features(&nn, &times(&nn)), Err(HrvError::TooFewIntervals));
    }

    #[test]
    fn clean_keeps_regular_intervals() {
        let t: Vec<f64> = (0..10).map(|i| i as f64 * 800.0).collect();
        let nn = clean_nn(&train(t)).unwrap();
        assert!(nn.nn_ms.iter().all(|x| *x == 800.0));
        assert_eq!(nn.quality, 1.0);
    }

    #[test]
    fn clean_drops_spurious_short_interval() {
        let mut t: Vec<f64> = (0..10).map(|i| i as f64 * 800.0).collect();
        t.insert(3, 1600.0 + 150.0);
        let nn = clean_nn(&train(t)).unwrap();
        assert!(!nn.nn_ms.contains(&150.0));
        assert_eq!(nn.nn_ms.len(), 9);
    }

    #[test]
    fn clean_needs_five_intervals() {
        assert_eq!(
            clean_nn(&train(vec![0.0, 800.0, 1600.0])),
            Err(HrvError::TooFewIntervals)
        );
    }

    #[test]
    fn breathing_from_modulated_series() {
        let mut nn = Vec::new();
        let mut t = 0.0;
        let mut ts = Vec::new();
        while t < 120_000.0 {
            let v = 800.0 + 40.0 * libm::sin(2.0 * PI * 0.25 * t / 1000.0);
            t += v;
            nn.push(v);
            ts.push(t);
        }
        let br = estimate_br(&nn, &ts).unwrap();
        assert!((br.rate - 15.0).abs() <= 0.5, "{}", br.rate);
        assert!(br.confident);
    }

    #[test]
    fn breathing_constant_series_low_confidence() {
        let nn = [800.0; 150];
        let br = estimate_br(&nn, &times(&nn)).unwrap();
        assert!(!br.confident);
        assert!((6.0..=24.0).contains(&br.rate));
    }

    #[test]
    fn breathing_needs_thirty_seconds() {
        let nn = [800.0; 25];
        assert_eq!(estimate_br(&nn, &times(&nn)), Err(HrvError::InsufficientSpan));
    }
}
