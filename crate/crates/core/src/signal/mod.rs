//! PPG cleaning and 15-minute windowing.

mod filter;

pub use filter::{bandpass_filter, design_bandpass, filtfilt, lfilter, lfilter_zi, FilterDesign};

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextSnapshot;
use crate::{EpochMs, MINUTE_MS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("invalid band {low_hz}..{high_hz} Hz at {rate_hz} Hz sampling")]
    InvalidBand { low_hz: f64, high_hz: f64, rate_hz: f64 },
    #[error("filter order must be at least 1")]
    InvalidOrder,
    #[error("filter design has poles on or outside the unit circle")]
    Unstable,
    #[error("signal of {len} samples is shorter than the {min} the filter needs")]
    TooShort { len: usize, min: usize },
    #[error("expected a PPG burst, got {0:?}")]
    WrongChannel(Channel),
    #[error("burst sampled at {burst} Hz but filter designed for {design} Hz")]
    RateMismatch { burst: f64, design: f64 },
    #[error("moving-average window covers less than one sample")]
    WindowTooSmall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Ppg,
    AccelX,
    AccelY,
    AccelZ,
    Gyro,
}

/// Fixed-rate samples from one recording burst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorBurst {
    pub start_time: EpochMs,
    pub rate_hz: f64,
    pub channel: Channel,
    pub samples: Vec<f64>,
}

impl SensorBurst {
    pub fn new(channel: Channel, start_time: EpochMs, rate_hz: f64, samples: Vec<f64>) -> Self {
        Self {
            start_time,
            rate_hz,
            channel,
            samples,
        }
    }

    /// Timestamp of sample `i`, in fractional milliseconds.
    pub fn sample_time_ms(&self, i: usize) -> f64 {
        self.start_time as f64 + i as f64 * 1000.0 / self.rate_hz
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    pub fn is_valid(&self) -> bool {
        !self.samples.is_empty() && self.rate_hz > 0.0 && self.rate_hz.is_finite()
    }
}

/// Recording cadence of the watch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub ppg_rate_hz: f64,
    pub burst_seconds: f64,
    pub window_minutes: i64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            ppg_rate_hz: 20.0,
            burst_seconds: 120.0,
            window_minutes: 15,
        }
    }
}

impl SamplingSpec {
    /// Checks Nyquist validity for `high_cut_hz` and that a burst fits a window.
    pub fn is_valid(&self, high_cut_hz: f64) -> bool {
        self.ppg_rate_hz > 2.0 * high_cut_hz
            && self.window_minutes > 0
            && self.burst_seconds > 0.0
            && self.burst_seconds <= (self.window_minutes * 60) as f64
    }

    pub fn window_ms(&self) -> i64 {
        self.window_minutes * MINUTE_MS
    }

    /// Samples a complete PPG burst must hold.
    pub fn burst_samples(&self, rate_hz: f64) -> usize {
        libm::round(self.burst_seconds * rate_hz) as usize
    }
}

/// Centered moving mean over `round(window_seconds * rate)` samples. Edge
/// windows shrink to the samples that exist.
pub fn moving_average(burst: &SensorBurst, window_seconds: f64) -> Result<SensorBurst, SignalError> {
    let w = libm::round(window_seconds * burst.rate_hz);
    if !(w >= 1.0) {
        return Err(SignalError::WindowTooSmall);
    }
    Ok(SensorBurst {
        samples: centered_mean(&burst.samples, w as usize),
        ..burst.clone()
    })
}

pub(crate) fn centered_mean(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    let left = (w - 1) / 2;
    let right = w - 1 - left;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// One wall-clock slot of a single user's recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawWindow {
    pub slot_start: EpochMs,
    /// Every burst (any channel) whose start falls in the slot.
    pub bursts: Vec<SensorBurst>,
    pub context: Vec<ContextSnapshot>,
}

impl RawWindow {
    /// The first complete PPG burst of the slot, if any.
    pub fn ppg(&self, spec: &SamplingSpec) -> Option<&SensorBurst> {
        self.bursts
            .iter()
            .find(|b| b.channel == Channel::Ppg && b.samples.len() >= spec.burst_samples(b.rate_hz))
    }

    pub fn channel(&self, channel: Channel) -> Option<&SensorBurst> {
        self.bursts.iter().find(|b| b.channel == channel)
    }
}

/// Start of the slot containing `t`.
pub fn slot_of(t: EpochMs, spec: &SamplingSpec) -> EpochMs {
    t.div_euclid(spec.window_ms()) * spec.window_ms()
}

/// Cuts one user's bursts and context into wall-clock slots.
///
/// A burst belongs to the slot of its start time, even when it runs past the
/// boundary. Only slots holding at least one burst or snapshot are emitted.
pub fn windowize(
    bursts: &[SensorBurst],
    context: &[ContextSnapshot],
    spec: &SamplingSpec,
) -> Vec<RawWindow> {
    let mut slots: BTreeMap<EpochMs, RawWindow> = BTreeMap::new();
    fn slot<'a>(slots: &'a mut BTreeMap<EpochMs, RawWindow>, t: EpochMs, spec: &SamplingSpec) -> &'a mut RawWindow {
        let s = slot_of(t, spec);
        slots.entry(s).or_insert_with(|| RawWindow {
            slot_start: s,
            bursts: Vec::new(),
            context: Vec::new(),
        })
    }
    for b in bursts {
        slot(&mut slots, b.start_time, spec).bursts.push(b.clone());
    }
    for c in context {
        slot(&mut slots, c.timestamp, spec).context.push(c.clone());
    }
    slots.into_values().collect()
}
