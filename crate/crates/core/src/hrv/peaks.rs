//! Adaptive-threshold systolic peak detection.
//!
//! The signal is rescaled to `[0, 1024]` and compared against its own moving
//! average raised by a sweep of levels. Each level gives a candidate peak
//! set; the one with a plausible heart rate and the steadiest intervals wins.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::HrvError;
use crate::signal::{centered_mean, SensorBurst};
use crate::stats;

const SCALE: f64 = 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakConfig {
    /// Width of the moving-average baseline.
    pub baseline_seconds: f64,
    /// Raise levels, in thousandths of the signal amplitude.
    pub raise_levels: Vec<u32>,
    pub min_bpm: f64,
    pub max_bpm: f64,
    pub min_duration_s: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            baseline_seconds: 0.75,
            raise_levels: (1..=60).map(|i| i * 5).collect(),
            min_bpm: 40.0,
            max_bpm: 180.0,
            min_duration_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakTrain {
    /// Strictly increasing peak times (epoch ms, sample resolution).
    pub peak_times_ms: Vec<f64>,
    pub peak_indices: Vec<usize>,
    /// Raise level that was selected, in thousandths.
    pub raise_level: u32,
    /// Fraction of successive intervals inside the NN plausibility band.
    pub quality: f64,
}

/// Detects peaks with the default configuration.
pub fn detect_peaks(ppg: &SensorBurst) -> Result<PeakTrain, HrvError> {
    detect_peaks_with(ppg, &PeakConfig::default())
}

pub fn detect_peaks_with(ppg: &SensorBurst, cfg: &PeakConfig) -> Result<PeakTrain, HrvError> {
    if !ppg.is_valid() || ppg.duration_seconds() < cfg.min_duration_s {
        return Err(HrvError::TooShort);
    }
    let x = &ppg.samples;
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let range = hi - lo;
    if !(range > 1e-12 * (1.0 + hi.abs().max(lo.abs()))) {
        return Err(HrvError::NoPlausiblePeaks);
    }
    let scaled: Vec<f64> = x.iter().map(|v| (v - lo) / range * SCALE).collect();
    let w = (libm::round(cfg.baseline_seconds * ppg.rate_hz) as usize).max(1);
    let baseline = centered_mean(&scaled, w);
    let ms_per_sample = 1000.0 / ppg.rate_hz;

    let mut best: Option<(f64, u32, Vec<usize>)> = None;
    for &r in &cfg.raise_levels {
        let lift = r as f64 / 1000.0 * SCALE;
        let peaks = region_maxima(&scaled, &baseline, lift);
        if peaks.len() < 2 {
            continue;
        }
        let nn: Vec<f64> = peaks
            .windows(2)
            .map(|p| (p[1] - p[0]) as f64 * ms_per_sample)
            .collect();
        let bpm = 60_000.0 / stats::mean(&nn);
        if bpm < cfg.min_bpm || bpm > cfg.max_bpm {
            continue;
        }
        let sd = stats::std_dev(&nn);
        if best.as_ref().is_none_or(|(b, _, _)| sd < *b) {
            best = Some((sd, r, peaks));
        }
    }
    let (_, raise_level, peak_indices) = best.ok_or(HrvError::NoPlausiblePeaks)?;
    let peak_times_ms: Vec<f64> = peak_indices.iter().map(|&i| ppg.sample_time_ms(i)).collect();
    let total = peak_times_ms.len() - 1;
    let kept = peak_times_ms
        .windows(2)
        .filter(|p| super::nn_plausible(p[1] - p[0]))
        .count();
    Ok(PeakTrain {
        peak_times_ms,
        peak_indices,
        raise_level,
        quality: kept as f64 / total as f64,
    })
}

/// Index of the maximum of every run where `x > baseline + lift`.
fn region_maxima(x: &[f64], baseline: &[f64], lift: f64) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut current: Option<usize> = None;
    for i in 0..x.len() {
        if x[i] > baseline[i] + lift {
            match current {
                Some(m) if x[m] >= x[i] => {}
                _ => current = Some(i),
            }
        } else if let Some(m) = current.take() {
            peaks.push(m);
        }
    }
    if let Some(m) = current {
        peaks.push(m);
    }
    peaks
}
