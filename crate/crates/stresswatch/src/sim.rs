//! Discrete-event simulation of the watch / phone / cloud deployment with
//! synthetic participants.
//!
//! Each user runs in an independent event loop with its own random stream,
//! so a study is the concatenation of per-user runs in user order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use stresswatch_core::context::{default_zones, ContextSnapshot, GeoPoint, GeoZone, Payload, Sensor};
use stresswatch_core::dataset::EmaResponse;
use stresswatch_core::sema::{self, Decision, SemaConfig, SemaState, TriggerRecord, WearSample};
use stresswatch_core::signal::{Channel, SamplingSpec, SensorBurst};
use stresswatch_core::{EpochMs, DAY_MS, HOUR_MS, MINUTE_MS};

use crate::formats::{BurstRecord, LatentSegment};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid simulation config: {0}")]
    Invalid(String),
}

/// A daily interval in milliseconds since local midnight; `end` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyInterval {
    pub start_ms: i64,
    pub end_ms: i64,
}

impl DailyInterval {
    pub fn hours(start: f64, end: f64) -> Self {
        Self {
            start_ms: (start * HOUR_MS as f64) as i64,
            end_ms: (end * HOUR_MS as f64) as i64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkModel {
    pub wifi_outages: Vec<DailyInterval>,
    pub bluetooth_outages: Vec<DailyInterval>,
    pub wifi_latency_ms: i64,
    pub bluetooth_latency_ms: i64,
    /// Whether the phone can upload without Wi-Fi.
    pub edge_cellular: bool,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            wifi_outages: Vec::new(),
            bluetooth_outages: Vec::new(),
            wifi_latency_ms: 2_000,
            bluetooth_latency_ms: 30_000,
            edge_cellular: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParticipantModel {
    pub baseline_bpm_mean: f64,
    pub baseline_bpm_sd: f64,
    pub stress_bpm_delta: f64,
    /// Burst-to-burst heart-rate scatter.
    pub bpm_noise_sd: f64,
    pub mean_unstressed_minutes: f64,
    pub mean_stressed_minutes: f64,
    pub compliance: f64,
    /// Relative weights of Likert levels 2..=5 while stressed.
    pub likert_weights: [f64; 4],
    pub max_response_delay_minutes: f64,
    /// Probability that a stress-coupled context sensor follows the latent
    /// state rather than a coin flip.
    pub context_coupling: f64,
    /// Probability that a given sensor reports at a context tick.
    pub sensor_probability: f64,
    pub ppg_noise: f64,
    pub wake_hour: f64,
    pub sleep_hour: f64,
}

impl Default for ParticipantModel {
    fn default() -> Self {
        Self {
            baseline_bpm_mean: 70.0,
            baseline_bpm_sd: 6.0,
            stress_bpm_delta: 15.0,
            bpm_noise_sd: 4.0,
            mean_unstressed_minutes: 480.0,
            mean_stressed_minutes: 360.0,
            compliance: 0.9,
            likert_weights: [0.45, 0.35, 0.1, 0.1],
            max_response_delay_minutes: 10.0,
            context_coupling: 0.8,
            sensor_probability: 0.6,
            ppg_noise: 0.05,
            wake_hour: 6.5,
            sleep_hour: 22.5,
        }
    }
}

/// Per-user deviations from the population model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserOverride {
    /// Zero-based user index.
    pub user: usize,
    #[serde(default)]
    pub baseline_bpm: Option<f64>,
    #[serde(default)]
    pub invert_context: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_users: usize,
    pub days: usize,
    pub seed: u64,
    /// Start of the first simulated day; should fall on local midnight.
    pub start_ms: EpochMs,
    pub sampling: SamplingSpec,
    pub accel_rate_hz: f64,
    pub context_interval_minutes: [f64; 2],
    pub sema_tick_minutes: f64,
    pub network: NetworkModel,
    pub participant: ParticipantModel,
    pub overrides: Vec<UserOverride>,
    pub zones: Vec<GeoZone>,
    pub sema: SemaConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_users: 3,
            days: 1,
            seed: 1,
            // 2024-03-04 00:00 UTC
            start_ms: 1_709_510_400_000,
            sampling: SamplingSpec::default(),
            accel_rate_hz: 10.0,
            context_interval_minutes: [1.0, 5.0],
            sema_tick_minutes: 5.0,
            network: NetworkModel::default(),
            participant: ParticipantModel::default(),
            overrides: Vec::new(),
            zones: default_zones(),
            sema: SemaConfig::default(),
        }
    }
}

fn prob(name: &str, p: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be in [0, 1], got {p}")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.n_users == 0 {
            return bad("n_users must be at least 1");
        }
        if self.days == 0 {
            return bad("days must be at least 1");
        }
        let p = &self.participant;
        prob("compliance", p.compliance)?;
        prob("context_coupling", p.context_coupling)?;
        prob("sensor_probability", p.sensor_probability)?;
        if p.likert_weights.iter().any(|w| !(*w >= 0.0)) || p.likert_weights.iter().sum::<f64>() <= 0.0 {
            return bad("likert_weights must be non-negative with a positive sum");
        }
        if !(p.mean_stressed_minutes > 0.0 && p.mean_unstressed_minutes > 0.0) {
            return bad("dwell times must be positive");
        }
        if !(p.baseline_bpm_sd >= 0.0 && p.bpm_noise_sd >= 0.0 && p.ppg_noise >= 0.0 && p.max_response_delay_minutes >= 0.0) {
            return bad("spreads and delays must be non-negative");
        }
        let top = p.baseline_bpm_mean + p.stress_bpm_delta;
        if !(40.0..=180.0).contains(&p.baseline_bpm_mean) || !(40.0..=180.0).contains(&top) {
            return bad("heart rates must stay within 40..180 bpm");
        }
        if !(0.0..=24.0).contains(&p.wake_hour) || !(p.wake_hour < p.sleep_hour && p.sleep_hour <= 24.0) {
            return bad("wake_hour must precede sleep_hour within the day");
        }
        if !self.sampling.is_valid(3.5) {
            return bad("sampling spec invalid for the 3.5 Hz band edge");
        }
        if !(self.accel_rate_hz > 0.0) {
            return bad("accel_rate_hz must be positive");
        }
        let [lo, hi] = self.context_interval_minutes;
        if !(lo > 0.0 && lo <= hi) {
            return bad("context interval must satisfy 0 < min <= max");
        }
        if !(self.sema_tick_minutes > 0.0) {
            return bad("sema_tick_minutes must be positive");
        }
        let n = &self.network;
        for iv in n.wifi_outages.iter().chain(&n.bluetooth_outages) {
            if !(0 <= iv.start_ms && iv.start_ms < iv.end_ms && iv.end_ms <= DAY_MS) {
                return bad("outage intervals must lie within one day with start < end");
            }
        }
        if n.wifi_latency_ms < 0 || n.bluetooth_latency_ms < 0 {
            return bad("latencies must be non-negative");
        }
        for o in &self.overrides {
            if o.user >= self.n_users {
                return bad("override refers to a missing user");
            }
            if o.baseline_bpm.is_some_and(|b| !(40.0..=180.0).contains(&b) || !(40.0..=180.0).contains(&(b + p.stress_bpm_delta))) {
                return bad("override heart rate must stay within 40..180 bpm");
            }
        }
        if self.zones.iter().any(|z| z.radius_m <= 0.0 || z.code > 2) {
            return bad("zones need positive radii and codes 0..2");
        }
        Ok(())
    }

    pub fn end_ms(&self) -> EpochMs {
        self.start_ms + self.days as i64 * DAY_MS
    }

    pub fn user_id(i: usize) -> String {
        format!("u{:02}", i + 1)
    }
}

/// Synthetic PPG plus the exact beat times that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPpg {
    pub burst: SensorBurst,
    pub peak_times_s: Vec<f64>,
}

pub const PULSE_SIGMA_S: f64 = 0.08;

/// Beat times of a rate trace: the integrated rate crosses each integer
/// after `phase0`, starting from time zero.
pub fn beat_times(bpm: &dyn Fn(f64) -> f64, duration_s: f64, phase0: f64) -> Vec<f64> {
    let dt = 1e-3;
    let mut beats = Vec::new();
    let mut phase = phase0;
    let mut next = phase0.ceil();
    if phase0 == next {
        beats.push(0.0);
        next += 1.0;
    }
    let steps = (duration_s / dt).round() as usize;
    for i in 0..steps {
        let t = i as f64 * dt;
        // trapezoid step
        let inc = 0.5 * (bpm(t) + bpm(t + dt)) / 60.0 * dt;
        while phase + inc >= next {
            let frac = (next - phase) / inc;
            let tb = t + frac * dt;
            if tb < duration_s - 0.5 * dt {
                beats.push(tb);
            }
            next += 1.0;
        }
        phase += inc;
    }
    beats
}

/// Gaussian pulses at the beat times plus white noise.
pub fn synth_ppg_phase<R: Rng>(
    bpm: &dyn Fn(f64) -> f64,
    duration_s: f64,
    rate_hz: f64,
    noise_level: f64,
    phase0: f64,
    start_ms: EpochMs,
    rng: &mut R,
) -> SynthPpg {
    let beats = beat_times(bpm, duration_s, phase0);
    let n = (duration_s * rate_hz).round() as usize;
    let mut samples = vec![0.0; n];
    let reach = 5.0 * PULSE_SIGMA_S;
    for &b in &beats {
        let lo = (((b - reach) * rate_hz).floor().max(0.0)) as usize;
        let hi = (((b + reach) * rate_hz).ceil() as usize).min(n.saturating_sub(1));
        for (i, s) in samples.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let d = i as f64 / rate_hz - b;
            *s += (-d * d / (2.0 * PULSE_SIGMA_S * PULSE_SIGMA_S)).exp();
        }
    }
    if noise_level > 0.0 {
        let normal = Normal::new(0.0, noise_level).expect("finite noise level");
        for s in &mut samples {
            *s += normal.sample(rng);
        }
    }
    SynthPpg {
        burst: SensorBurst::new(Channel::Ppg, start_ms, rate_hz, samples),
        peak_times_s: beats,
    }
}

/// Seeded synthetic PPG whose first beat falls at time zero.
pub fn synth_ppg(bpm: &dyn Fn(f64) -> f64, duration_s: f64, rate_hz: f64, noise_level: f64, seed: u64) -> SynthPpg {
    synth_ppg_phase(bpm, duration_s, rate_hz, noise_level, 0.0, 0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Watch,
    Edge,
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Burst,
    Context,
    Sync,
    EmaPrompt,
    EmaResponse,
}

/// A delivered event. `created_ms` is when the carried record was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: EpochMs,
    pub actor: Actor,
    pub kind: EventKind,
    pub user_id: String,
    pub created_ms: EpochMs,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserOutput {
    pub user_id: String,
    /// Watch records in cloud-arrival order.
    pub bursts: Vec<BurstRecord>,
    pub context: Vec<ContextSnapshot>,
    pub emas: Vec<EmaResponse>,
    pub triggers: Vec<TriggerRecord>,
    pub latent: Vec<LatentSegment>,
    pub events: Vec<SimEvent>,
    /// Watch records created, counted at the source.
    pub bursts_emitted: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOutput {
    pub users: Vec<UserOutput>,
}

impl SimOutput {
    pub fn bursts(&self) -> impl Iterator<Item = &BurstRecord> {
        self.users.iter().flat_map(|u| u.bursts.iter())
    }

    pub fn context(&self) -> impl Iterator<Item = &ContextSnapshot> {
        self.users.iter().flat_map(|u| u.context.iter())
    }

    pub fn emas(&self) -> impl Iterator<Item = &EmaResponse> {
        self.users.iter().flat_map(|u| u.emas.iter())
    }

    pub fn triggers(&self) -> impl Iterator<Item = &TriggerRecord> {
        self.users.iter().flat_map(|u| u.triggers.iter())
    }

    pub fn latent(&self) -> Vec<(String, LatentSegment)> {
        self.users
            .iter()
            .flat_map(|u| u.latent.iter().map(move |s| (u.user_id.clone(), *s)))
            .collect()
    }
}

pub fn run_simulation(config: &SimConfig) -> Result<SimOutput, ConfigError> {
    config.validate()?;
    Ok(SimOutput {
        users: (0..config.n_users).map(|u| simulate_user(config, u)).collect(),
    })
}

/// Latent state at `t` from a sorted segment list.
pub fn latent_at(trace: &[LatentSegment], t: EpochMs) -> u8 {
    let i = trace.partition_point(|s| s.end_ms <= t);
    trace.get(i).map_or(0, |s| s.stress)
}

fn local_day_start(t: EpochMs, tz: i64) -> EpochMs {
    (t + tz).div_euclid(DAY_MS) * DAY_MS - tz
}

/// Whether `t` falls in one of the daily outage intervals.
fn in_outage(t: EpochMs, outages: &[DailyInterval], tz: i64) -> bool {
    let tod = (t + tz).rem_euclid(DAY_MS);
    outages.iter().any(|o| o.start_ms <= tod && tod < o.end_ms)
}

/// First time at or after `t` outside every outage.
fn next_up(mut t: EpochMs, outages: &[DailyInterval], tz: i64) -> EpochMs {
    while let Some(o) = {
        let tod = (t + tz).rem_euclid(DAY_MS);
        outages.iter().find(|o| o.start_ms <= tod && tod < o.end_ms)
    } {
        t = local_day_start(t, tz) + o.end_ms;
    }
    t
}

struct Router<'a> {
    net: &'a NetworkModel,
    tz: i64,
}

impl Router<'_> {
    fn wifi_up(&self, t: EpochMs) -> bool {
        !in_outage(t, &self.net.wifi_outages, self.tz)
    }

    fn edge_uplink(&self, t: EpochMs) -> EpochMs {
        if self.net.edge_cellular {
            t
        } else {
            next_up(t, &self.net.wifi_outages, self.tz)
        }
    }

    /// Cloud arrival of phone data created at `t`.
    fn edge_arrival(&self, t: EpochMs) -> EpochMs {
        self.edge_uplink(t) + self.net.wifi_latency_ms
    }

    /// Cloud arrival of watch data created at `t`: straight over Wi-Fi,
    /// else through the phone over Bluetooth, else stored on the watch
    /// until either link returns.
    fn watch_arrival(&self, t: EpochMs) -> (EpochMs, bool) {
        let mut now = t;
        loop {
            if self.wifi_up(now) {
                return (now + self.net.wifi_latency_ms, false);
            }
            if !in_outage(now, &self.net.bluetooth_outages, self.tz) {
                return (self.edge_arrival(now + self.net.bluetooth_latency_ms), true);
            }
            let w = next_up(now, &self.net.wifi_outages, self.tz);
            let b = next_up(now, &self.net.bluetooth_outages, self.tz);
            now = w.min(b);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Record(EpochMs),
    ContextTick,
    SemaTick,
    ArriveWatch(usize),
    ArriveContext(usize),
    Answer(EpochMs),
}

struct Queue {
    heap: BinaryHeap<Reverse<(EpochMs, u64, Ev)>>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, t: EpochMs, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse((t, self.seq, ev)));
    }

    fn pop(&mut self) -> Option<(EpochMs, Ev)> {
        self.heap.pop().map(|Reverse((t, _, e))| (t, e))
    }
}

fn quantize(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn build_latent<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Vec<LatentSegment> {
    let p = &cfg.participant;
    let exp_u = Exp::new(1.0 / (p.mean_unstressed_minutes * MINUTE_MS as f64)).expect("positive");
    let exp_s = Exp::new(1.0 / (p.mean_stressed_minutes * MINUTE_MS as f64)).expect("positive");
    let frac = p.mean_stressed_minutes / (p.mean_stressed_minutes + p.mean_unstressed_minutes);
    let mut state = u8::from(rng.random::<f64>() < frac);
    let mut t = cfg.start_ms;
    let mut out = Vec::new();
    while t < cfg.end_ms() {
        let dwell = if state == 1 { exp_s.sample(rng) } else { exp_u.sample(rng) };
        let end = (t + dwell.max(MINUTE_MS as f64) as i64).min(cfg.end_ms());
        out.push(LatentSegment {
            start_ms: t,
            end_ms: end,
            stress: state,
        });
        t = end;
        state = 1 - state;
    }
    out
}

struct UserSim<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    user_id: String,
    baseline_bpm: f64,
    invert: bool,
    latent: Vec<LatentSegment>,
    /// Per-day wear span (on, off) as epoch times.
    wear: Vec<(EpochMs, EpochMs)>,
    weather_today: Vec<&'static str>,
}

const WEATHER: [&str; 6] = ["clear", "mist", "clouds", "rain", "snow", "drizzle"];
const WEATHER_WEIGHTS: [f64; 6] = [0.45, 0.1, 0.25, 0.12, 0.03, 0.05];

impl UserSim<'_> {
    fn worn(&self, t: EpochMs) -> bool {
        let day = ((t - self.cfg.start_ms).div_euclid(DAY_MS)) as usize;
        self.wear.get(day).is_some_and(|&(on, off)| on <= t && t < off)
    }

    fn stress(&self, t: EpochMs) -> u8 {
        latent_at(&self.latent, t)
    }

    fn record_bursts(&mut self, start: EpochMs) -> Vec<BurstRecord> {
        let s = self.cfg.sampling;
        let secs = s.burst_seconds;
        let worn = self.worn(start);
        let p = &self.cfg.participant;
        let ppg = if worn {
            let bpm = self.baseline_bpm
                + p.stress_bpm_delta * f64::from(self.stress(start))
                + Normal::new(0.0, p.bpm_noise_sd.max(1e-12)).expect("finite").sample(&mut self.rng);
            let bpm = bpm.clamp(45.0, 170.0);
            let resp_hz = self.rng.random_range(0.2..0.3);
            let depth = self.rng.random_range(0.02..0.05);
            let phase0 = self.rng.random::<f64>();
            let trace = move |t: f64| bpm * (1.0 + depth * (2.0 * std::f64::consts::PI * resp_hz * t).sin());
            synth_ppg_phase(&trace, secs, s.ppg_rate_hz, p.ppg_noise, phase0, start, &mut self.rng).burst
        } else {
            let normal = Normal::new(0.0, p.ppg_noise.max(1e-3)).expect("finite");
            let n = (secs * s.ppg_rate_hz).round() as usize;
            SensorBurst::new(Channel::Ppg, start, s.ppg_rate_hz, (0..n).map(|_| normal.sample(&mut self.rng)).collect())
        };
        let n_acc = (secs * self.cfg.accel_rate_hz).round() as usize;
        let jitter = Normal::new(0.0, 0.06).expect("finite");
        let mut axes = [Vec::with_capacity(n_acc), Vec::with_capacity(n_acc), Vec::with_capacity(n_acc)];
        let g = [0.0, 0.0, 1.0];
        for _ in 0..n_acc {
            for (a, ax) in axes.iter_mut().enumerate() {
                let v = if worn { g[a] + jitter.sample(&mut self.rng) } else { g[a] };
                ax.push(quantize(v));
            }
        }
        let mut out = vec![BurstRecord {
            user_id: self.user_id.clone(),
            channel: Channel::Ppg,
            start_time_ms: start,
            rate_hz: s.ppg_rate_hz,
            samples: ppg.samples.into_iter().map(quantize).collect(),
            arrival_time_ms: None,
        }];
        for (ch, samples) in [Channel::AccelX, Channel::AccelY, Channel::AccelZ].into_iter().zip(axes) {
            out.push(BurstRecord {
                user_id: self.user_id.clone(),
                channel: ch,
                start_time_ms: start,
                rate_hz: self.cfg.accel_rate_hz,
                samples,
                arrival_time_ms: None,
            });
        }
        out
    }

    /// Latent state as seen by coupled context sensors.
    fn context_state(&mut self, t: EpochMs) -> bool {
        let s = if self.rng.random::<f64>() < self.cfg.participant.context_coupling {
            self.stress(t) == 1
        } else {
            self.rng.random::<bool>()
        };
        s != self.invert
    }

    fn zone_point(&mut self, code: Option<u8>) -> GeoPoint {
        let z = code.and_then(|c| self.cfg.zones.iter().find(|z| z.code == c).copied());
        let (lat, lon, r) = match z {
            Some(z) => (z.lat, z.lon, z.radius_m * 0.5),
            // a few kilometres away from every zone
            None => (self.cfg.zones.first().map_or(0.0, |z| z.lat) + 0.05, self.cfg.zones.first().map_or(0.0, |z| z.lon), 500.0),
        };
        let d = self.rng.random::<f64>() * r;
        let a = self.rng.random::<f64>() * std::f64::consts::TAU;
        let dlat = d * a.cos() / 111_320.0;
        let dlon = d * a.sin() / (111_320.0 * lat.to_radians().cos());
        GeoPoint {
            lat: lat + dlat,
            lon: lon + dlon,
            alt: 20.0,
        }
    }

    fn snapshot(&mut self, t: EpochMs, sensor: Sensor) -> ContextSnapshot {
        let tz = self.cfg.sema.tz_offset_ms;
        let hour = (t + tz).rem_euclid(DAY_MS) as f64 / HOUR_MS as f64;
        let day = ((t - self.cfg.start_ms).div_euclid(DAY_MS)) as usize;
        let normal = |sd: f64| Normal::new(0.0, sd).expect("finite");
        let exp = |mean: f64| Exp::new(1.0 / mean).expect("positive");
        let payload = match sensor {
            Sensor::BatteryAdaptor => Payload::Number(f64::from(u8::from(!self.worn(t) && hour < 12.0))),
            Sensor::BatteryLevel => {
                let v = 100.0 - 75.0 * ((hour - self.cfg.participant.wake_hour).max(0.0) / 18.0) + normal(4.0).sample(&mut self.rng);
                Payload::Number(v.clamp(1.0, 100.0).round())
            }
            Sensor::Speed => {
                let u = self.rng.random::<f64>();
                Payload::Number(if u < 0.7 {
                    0.0
                } else if u < 0.9 {
                    1.3 + normal(0.2).sample(&mut self.rng).abs()
                } else {
                    8.0 + exp(4.0).sample(&mut self.rng)
                })
            }
            Sensor::DeviceOff => {
                let mean = if self.context_state(t) { 4.0 } else { 45.0 };
                Payload::Number(exp(mean).sample(&mut self.rng))
            }
            Sensor::DeviceOn => {
                let mean = if self.context_state(t) { 15.0 } else { 3.0 };
                Payload::Number(exp(mean).sample(&mut self.rng))
            }
            Sensor::AirPressure => Payload::Number(1013.0 + normal(6.0).sample(&mut self.rng)),
            Sensor::WeatherTemperature => Payload::Number(
                18.0 + 7.0 * ((hour - 9.0) / 24.0 * std::f64::consts::TAU).sin() + normal(2.0).sample(&mut self.rng),
            ),
            Sensor::Weather => Payload::Text(self.weather_today.get(day).copied().unwrap_or("clear").into()),
            Sensor::WindDegrees => Payload::Number(self.rng.random_range(0.0..360.0)),
            Sensor::WindSpeed => Payload::Number(exp(4.0).sample(&mut self.rng)),
            Sensor::ScreenStatus => {
                let busy = self.context_state(t);
                let choices: [f64; 2] = if busy { [1.0, 3.0] } else { [0.0, 2.0] };
                Payload::Number(choices[usize::from(self.rng.random::<bool>())])
            }
            Sensor::Location => {
                let busy = self.context_state(t);
                let u = self.rng.random::<f64>();
                let code = match (busy, u) {
                    (true, u) if u < 0.7 => Some(1),
                    (false, u) if u < 0.6 => Some(2),
                    (_, u) if u < 0.85 => Some(0),
                    _ => None,
                };
                Payload::Location(self.zone_point(code))
            }
        };
        ContextSnapshot::new(&self.user_id, t, sensor, payload)
    }
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn accel_magnitudes(recs: &[BurstRecord]) -> Vec<f64> {
    let axis = |c: Channel| recs.iter().find(|r| r.channel == c).map(|r| r.samples.as_slice()).unwrap_or(&[]);
    let (x, y, z) = (axis(Channel::AccelX), axis(Channel::AccelY), axis(Channel::AccelZ));
    x.iter()
        .zip(y)
        .zip(z)
        .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
        .collect()
}

/// Runs one user's event loop.
pub fn simulate_user(cfg: &SimConfig, user: usize) -> UserOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(user as u64 + 1);
    let p = &cfg.participant;
    let ov = cfg.overrides.iter().find(|o| o.user == user);
    let mut baseline = p.baseline_bpm_mean + Normal::new(0.0, p.baseline_bpm_sd.max(1e-12)).expect("finite").sample(&mut rng);
    baseline = baseline.clamp(45.0, 180.0 - p.stress_bpm_delta);
    if let Some(b) = ov.and_then(|o| o.baseline_bpm) {
        baseline = b;
    }
    let latent = build_latent(cfg, &mut rng);
    let tz = cfg.sema.tz_offset_ms;
    let wear = (0..cfg.days)
        .map(|d| {
            let day0 = cfg.start_ms + d as i64 * DAY_MS;
            let on = day0 + ((p.wake_hour + rng.random_range(0.0..1.0)) * HOUR_MS as f64) as i64;
            let off = day0 + ((p.sleep_hour + rng.random_range(0.0..1.0)).min(24.0) * HOUR_MS as f64) as i64;
            (on, off)
        })
        .collect();
    let weather_today = (0..cfg.days).map(|_| WEATHER[pick_weighted(&mut rng, &WEATHER_WEIGHTS)]).collect();
    let mut sim = UserSim {
        cfg,
        rng,
        user_id: SimConfig::user_id(user),
        baseline_bpm: baseline,
        invert: ov.is_some_and(|o| o.invert_context),
        latent,
        wear,
        weather_today,
    };
    let router = Router { net: &cfg.network, tz };
    let mut out = UserOutput {
        user_id: sim.user_id.clone(),
        latent: sim.latent.clone(),
        ..Default::default()
    };

    let mut q = Queue {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    let window = cfg.sampling.window_ms();
    let burst_ms = (cfg.sampling.burst_seconds * 1000.0) as i64;
    let mut slot = cfg.start_ms;
    while slot < cfg.end_ms() {
        q.push(slot + burst_ms, Ev::Record(slot));
        slot += window;
    }
    q.push(cfg.start_ms, Ev::ContextTick);
    let tick = (cfg.sema_tick_minutes * MINUTE_MS as f64) as i64;
    q.push(cfg.start_ms + tick, Ev::SemaTick);

    let mut pending_watch: Vec<Vec<BurstRecord>> = Vec::new();
    let mut pending_ctx: Vec<Vec<ContextSnapshot>> = Vec::new();
    let mut last_watch_arrival = i64::MIN;
    let mut last_edge_arrival = i64::MIN;
    let mut newest: Option<(EpochMs, Vec<f64>)> = None;
    let mut state = SemaState::new(&sim.user_id, cfg.start_ms, &cfg.sema);
    let end = cfg.end_ms();

    while let Some((t, ev)) = q.pop() {
        match ev {
            Ev::Record(start) => {
                let recs = sim.record_bursts(start);
                out.bursts_emitted += recs.len();
                out.events.push(SimEvent {
                    time: t,
                    actor: Actor::Watch,
                    kind: EventKind::Burst,
                    user_id: sim.user_id.clone(),
                    created_ms: t,
                });
                let (arrival, _via_edge) = router.watch_arrival(t);
                let arrival = arrival.max(last_watch_arrival);
                last_watch_arrival = arrival;
                pending_watch.push(recs);
                q.push(arrival, Ev::ArriveWatch(pending_watch.len() - 1));
            }
            Ev::ContextTick => {
                let snaps: Vec<ContextSnapshot> = Sensor::ALL
                    .iter()
                    .filter_map(|&s| (sim.rng.random::<f64>() < p.sensor_probability).then_some(s))
                    .collect::<Vec<_>>()
                    .into_iter()
                    .map(|s| sim.snapshot(t, s))
                    .collect();
                if !snaps.is_empty() {
                    out.events.push(SimEvent {
                        time: t,
                        actor: Actor::Edge,
                        kind: EventKind::Context,
                        user_id: sim.user_id.clone(),
                        created_ms: t,
                    });
                    let arrival = router.edge_arrival(t).max(last_edge_arrival);
                    last_edge_arrival = arrival;
                    pending_ctx.push(snaps);
                    q.push(arrival, Ev::ArriveContext(pending_ctx.len() - 1));
                }
                let [lo, hi] = cfg.context_interval_minutes;
                let gap = (sim.rng.random_range(lo..=hi) * MINUTE_MS as f64) as i64;
                if t + gap < end {
                    q.push(t + gap, Ev::ContextTick);
                }
            }
            Ev::ArriveWatch(i) => {
                let mut recs = std::mem::take(&mut pending_watch[i]);
                let created = recs[0].start_time_ms + burst_ms;
                for r in &mut recs {
                    r.arrival_time_ms = Some(t);
                }
                out.events.push(SimEvent {
                    time: t,
                    actor: Actor::Cloud,
                    kind: EventKind::Sync,
                    user_id: sim.user_id.clone(),
                    created_ms: created,
                });
                if newest.as_ref().is_none_or(|(c, _)| created >= *c) {
                    newest = Some((created, accel_magnitudes(&recs)));
                }
                out.bursts.extend(recs);
                if t < end {
                    evaluate(&mut sim, &mut state, &mut out, &mut q, t, newest.as_ref());
                }
            }
            Ev::ArriveContext(i) => {
                let snaps = std::mem::take(&mut pending_ctx[i]);
                out.events.push(SimEvent {
                    time: t,
                    actor: Actor::Cloud,
                    kind: EventKind::Sync,
                    user_id: sim.user_id.clone(),
                    created_ms: snaps[0].timestamp,
                });
                out.context.extend(snaps);
            }
            Ev::SemaTick => {
                evaluate(&mut sim, &mut state, &mut out, &mut q, t, newest.as_ref());
                if t + tick < end {
                    q.push(t + tick, Ev::SemaTick);
                }
            }
            Ev::Answer(prompt) => {
                let level = if sim.stress(t) == 1 {
                    2 + pick_weighted(&mut sim.rng, &p.likert_weights) as u8
                } else {
                    1
                };
                out.events.push(SimEvent {
                    time: t,
                    actor: Actor::Cloud,
                    kind: EventKind::EmaResponse,
                    user_id: sim.user_id.clone(),
                    created_ms: prompt,
                });
                out.emas.push(EmaResponse {
                    user_id: sim.user_id.clone(),
                    timestamp: t,
                    stress_level: level,
                });
            }
        }
    }
    out
}

fn evaluate(
    sim: &mut UserSim<'_>,
    state: &mut SemaState,
    out: &mut UserOutput,
    q: &mut Queue,
    now: EpochMs,
    newest: Option<&(EpochMs, Vec<f64>)>,
) {
    let cfg = sim.cfg;
    let wear = match newest {
        Some((created, mags)) => WearSample {
            magnitudes: mags.clone(),
            rate_hz: cfg.accel_rate_hz,
            newest_data_time: *created,
        },
        None => WearSample {
            magnitudes: Vec::new(),
            rate_hz: cfg.accel_rate_hz,
            newest_data_time: i64::MIN / 2,
        },
    };
    let decision = sema::should_trigger(state, now, &wear, &cfg.sema);
    out.triggers.push(TriggerRecord::new(&sim.user_id, now, decision));
    if decision == Decision::Trigger {
        out.events.push(SimEvent {
            time: now,
            actor: Actor::Cloud,
            kind: EventKind::EmaPrompt,
            user_id: sim.user_id.clone(),
            created_ms: now,
        });
        let p = &cfg.participant;
        if sim.rng.random::<f64>() < p.compliance {
            let delay = (sim.rng.random::<f64>() * p.max_response_delay_minutes * MINUTE_MS as f64) as i64;
            q.push(now + delay, Ev::Answer(now));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_bpm_gives_one_pulse_per_second() {
        let s = synth_ppg(&|_| 60.0, 120.0, 20.0, 0.0, 1);
        assert_eq!(s.peak_times_s.len(), 120);
        for (k, t) in s.peak_times_s.iter().enumerate() {
            assert!((t - k as f64).abs() < 1e-9, "{k} {t}");
        }
        assert_eq!(s.burst.samples.len(), 2400);
    }

    #[test]
    fn ramp_beat_count_matches_integral() {
        // 60 -> 90 bpm over 120 s integrates to 150 beats
        let s = synth_ppg(&|t| 60.0 + 30.0 * t / 120.0, 120.0, 20.0, 0.0, 1);
        assert!((s.peak_times_s.len() as i64 - 150).abs() <= 1, "{}", s.peak_times_s.len());
    }

    #[test]
    fn seeds_change_noise_not_beats() {
        let a = synth_ppg(&|_| 75.0, 60.0, 20.0, 0.1, 1);
        let b = synth_ppg(&|_| 75.0, 60.0, 20.0, 0.1, 2);
        assert_eq!(a.peak_times_s, b.peak_times_s);
        assert_ne!(a.burst.samples, b.burst.samples);
    }

    #[test]
    fn outage_routing() {
        let net = NetworkModel {
            wifi_outages: vec![DailyInterval::hours(10.0, 14.0)],
            ..Default::default()
        };
        let r = Router { net: &net, tz: 0 };
        let day = 20 * DAY_MS;
        assert_eq!(r.watch_arrival(day + 9 * HOUR_MS).0, day + 9 * HOUR_MS + 2_000);
        let (arr, via_edge) = r.watch_arrival(day + 11 * HOUR_MS);
        assert!(via_edge);
        assert_eq!(arr, day + 14 * HOUR_MS + 2_000);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let mut c = SimConfig::default();
        c.participant.compliance = 1.5;
        assert!(c.validate().is_err());
        let c = SimConfig {
            days: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
