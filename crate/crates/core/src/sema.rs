//! Smart EMA trigger rules.
//!
//! A prompt goes out only between 07:00 and midnight local time, while the
//! watch is worn, when the newest data is recent, and when the dynamic
//! spacing toward seven prompts per day has elapsed.

use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{stats, EpochMs, DAY_MS, HOUR_MS, MINUTE_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SemaError {
    #[error("need at least {needed} accelerometer samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("the watch has not been worn yet today")]
    NoWearYet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WearConfig {
    /// Standard deviation of acceleration magnitude above which the watch
    /// counts as worn.
    pub threshold: f64,
    pub min_seconds: f64,
}

impl Default for WearConfig {
    fn default() -> Self {
        Self {
            threshold: 0.02,
            min_seconds: 10.0,
        }
    }
}

/// Wear detection from accelerometer magnitudes: a watch lying still shows
/// almost no variation.
pub fn is_wearing(magnitudes: &[f64], rate_hz: f64, cfg: &WearConfig) -> Result<bool, SemaError> {
    let needed = libm::ceil(cfg.min_seconds * rate_hz).max(1.0) as usize;
    if magnitudes.len() < needed || !(rate_hz > 0.0) {
        return Err(SemaError::InsufficientData {
            needed,
            got: magnitudes.len(),
        });
    }
    Ok(stats::std_dev(magnitudes) > cfg.threshold)
}

/// Data is recent when it is at most `max_age_ms` old (inclusive).
pub fn is_recent(newest_data_time: EpochMs, now: EpochMs, max_age_ms: i64) -> bool {
    now - newest_data_time <= max_age_ms
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemaConfig {
    /// Local time = UTC + offset.
    pub tz_offset_ms: i64,
    pub day_start_ms: i64,
    pub target_per_day: u32,
    pub recency_ms: i64,
    pub min_spacing_ms: i64,
    pub wear: WearConfig,
}

impl Default for SemaConfig {
    fn default() -> Self {
        Self {
            tz_offset_ms: 0,
            day_start_ms: 7 * HOUR_MS,
            target_per_day: 7,
            recency_ms: 15 * MINUTE_MS,
            min_spacing_ms: 30 * MINUTE_MS,
            wear: WearConfig::default(),
        }
    }
}

impl SemaConfig {
    pub fn local_day(&self, t: EpochMs) -> i64 {
        (t + self.tz_offset_ms).div_euclid(DAY_MS)
    }

    /// Milliseconds since local midnight.
    pub fn time_of_day(&self, t: EpochMs) -> i64 {
        (t + self.tz_offset_ms).rem_euclid(DAY_MS)
    }

    /// Epoch time of the local midnight that ends `day`.
    pub fn day_end(&self, day: i64) -> EpochMs {
        (day + 1) * DAY_MS - self.tz_offset_ms
    }
}

/// Per-user trigger state for one local day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemaState {
    pub user_id: String,
    pub day_anchor: i64,
    pub first_wear_time: Option<EpochMs>,
    pub prompts_sent_today: u32,
    pub last_prompt_time: Option<EpochMs>,
    pub target_per_day: u32,
}

impl SemaState {
    pub fn new(user_id: &str, now: EpochMs, cfg: &SemaConfig) -> Self {
        Self {
            user_id: user_id.into(),
            day_anchor: cfg.local_day(now),
            first_wear_time: None,
            prompts_sent_today: 0,
            last_prompt_time: None,
            target_per_day: cfg.target_per_day,
        }
    }

    /// Resets the daily counters when `now` is on a later local day.
    pub fn roll_over(&mut self, now: EpochMs, cfg: &SemaConfig) {
        let day = cfg.local_day(now);
        if day != self.day_anchor {
            self.day_anchor = day;
            self.first_wear_time = None;
            self.prompts_sent_today = 0;
            self.last_prompt_time = None;
        }
    }
}

/// Spacing before the next prompt: the time left until midnight, counted
/// from the later of `now` and the first wear, split over the prompts still
/// owed today. Never below the configured minimum spacing.
pub fn next_wait(state: &SemaState, now: EpochMs, cfg: &SemaConfig) -> Result<i64, SemaError> {
    let first = state.first_wear_time.ok_or(SemaError::NoWearYet)?;
    let remaining = state.target_per_day.saturating_sub(state.prompts_sent_today).max(1);
    let end = cfg.day_end(state.day_anchor);
    let wait = (end - now.max(first)).max(0) / i64::from(remaining);
    Ok(wait.max(cfg.min_spacing_ms))
}

/// Latest accelerometer window plus the creation time of the newest data
/// the cloud holds for the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WearSample {
    pub magnitudes: alloc::vec::Vec<f64>,
    pub rate_hz: f64,
    pub newest_data_time: EpochMs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    OutOfHours,
    DailyCapReached,
    NoWearData,
    NotWearing,
    NotRecent,
    TooSoon,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::OutOfHours => "out_of_hours",
            SkipReason::DailyCapReached => "daily_cap_reached",
            SkipReason::NoWearData => "no_wear_data",
            SkipReason::NotWearing => "not_wearing",
            SkipReason::NotRecent => "not_recent",
            SkipReason::TooSoon => "too_soon",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Trigger,
    Skip(SkipReason),
}

/// Evaluates every rule at `now` and, on a trigger, records the prompt.
pub fn should_trigger(state: &mut SemaState, now: EpochMs, wear: &WearSample, cfg: &SemaConfig) -> Decision {
    state.roll_over(now, cfg);
    let wearing = is_wearing(&wear.magnitudes, wear.rate_hz, &cfg.wear);
    if wearing == Ok(true) && state.first_wear_time.is_none() {
        state.first_wear_time = Some(now);
    }
    if cfg.time_of_day(now) < cfg.day_start_ms {
        return Decision::Skip(SkipReason::OutOfHours);
    }
    if state.prompts_sent_today >= state.target_per_day {
        return Decision::Skip(SkipReason::DailyCapReached);
    }
    match wearing {
        Err(_) => return Decision::Skip(SkipReason::NoWearData),
        Ok(false) => return Decision::Skip(SkipReason::NotWearing),
        Ok(true) => {}
    }
    if !is_recent(wear.newest_data_time, now, cfg.recency_ms) {
        return Decision::Skip(SkipReason::NotRecent);
    }
    if let Some(last) = state.last_prompt_time {
        match next_wait(state, now, cfg) {
            Ok(wait) if now - last >= wait => {}
            _ => return Decision::Skip(SkipReason::TooSoon),
        }
    }
    state.prompts_sent_today += 1;
    state.last_prompt_time = Some(now);
    Decision::Trigger
}

/// One line of the trigger log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerRecord {
    pub user_id: String,
    pub timestamp_ms: EpochMs,
    pub decision: String,
    pub reason: Option<String>,
}

impl TriggerRecord {
    pub fn new(user_id: &str, timestamp_ms: EpochMs, decision: Decision) -> Self {
        let (d, r) = match decision {
            Decision::Trigger => ("trigger", None),
            Decision::Skip(reason) => ("skip", Some(reason.as_str().into())),
        };
        Self {
            user_id: user_id.into(),
            timestamp_ms,
            decision: d.into(),
            reason: r,
        }
    }
}
