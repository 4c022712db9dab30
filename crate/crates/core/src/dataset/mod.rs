//! Window featurization, EMA labeling and the feature matrix.

mod impute;

pub use impute::{knn_impute, KnnImputer, Weighting};

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{extract_context_features, ContextFeatures, ContextSchema, CONTEXT_FEATURES};
use crate::hrv::{self, HrvFeatures, PeakConfig, HRV_FEATURES};
use crate::sema::{self, WearConfig};
use crate::signal::{self, Channel, FilterDesign, RawWindow, SamplingSpec};
use crate::{EpochMs, HOUR_MS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("stress level {0} outside 1..=5")]
    OutOfRange(u8),
    #[error("column {0} has no observed values")]
    EmptyColumn(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("row width {got} does not match {expected} columns")]
    Shape { expected: usize, got: usize },
}

/// A five-point Likert stress self-report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmaResponse {
    pub user_id: String,
    #[serde(rename = "timestamp_ms")]
    pub timestamp: EpochMs,
    pub stress_level: u8,
}

/// "Not at all" (1) is no stress; any higher level is stress.
pub fn binarize(label5: u8) -> Result<u8, DatasetError> {
    match label5 {
        1 => Ok(0),
        2..=5 => Ok(1),
        other => Err(DatasetError::OutOfRange(other)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub user_id: String,
    pub window_start: EpochMs,
    pub hrv: Option<HrvFeatures>,
    pub context: ContextFeatures,
    pub label5: Option<u8>,
    pub label2: Option<u8>,
}

/// How far ahead of a window an EMA may be and still label it.
pub const DEFAULT_LABEL_HORIZON_MS: i64 = 8 * HOUR_MS;

/// Labels each window from the user's earliest EMA at or after the window
/// start, within `horizon_ms`. Windows with no such EMA stay unlabeled.
pub fn label_windows(windows: &mut [FeatureWindow], emas: &[EmaResponse], horizon_ms: i64) {
    let mut sorted: Vec<&EmaResponse> = emas.iter().filter(|e| binarize(e.stress_level).is_ok()).collect();
    sorted.sort_by(|a, b| (&a.user_id, a.timestamp).cmp(&(&b.user_id, b.timestamp)));
    for w in windows.iter_mut() {
        let first = sorted.partition_point(|e| (e.user_id.as_str(), e.timestamp) < (w.user_id.as_str(), w.window_start));
        let hit = sorted
            .get(first)
            .filter(|e| e.user_id == w.user_id && e.timestamp - w.window_start <= horizon_ms);
        w.label5 = hit.map(|e| e.stress_level);
        w.label2 = w.label5.and_then(|l| binarize(l).ok());
    }
}

/// Settings for turning a raw window into features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeConfig {
    pub sampling: SamplingSpec,
    pub filter: FilterDesign,
    /// Width of the smoothing moving average; used as the detector baseline.
    pub smoothing_seconds: f64,
    pub peaks: PeakConfig,
    pub wear: WearConfig,
    pub schema: ContextSchema,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        let sampling = SamplingSpec::default();
        let filter = signal::design_bandpass(3, 0.7, 3.5, sampling.ppg_rate_hz).expect("default band is valid");
        let peaks = PeakConfig {
            baseline_seconds: 1.0,
            ..PeakConfig::default()
        };
        Self {
            sampling,
            filter,
            smoothing_seconds: 1.0,
            peaks,
            wear: WearConfig::default(),
            schema: ContextSchema::default(),
        }
    }
}

/// HRV features of the window's PPG burst: band-pass, then adaptive peak
/// detection against the 1-s moving average. `None` when the burst is absent
/// or incomplete, the accelerometer says the watch was off-wrist, or no
/// plausible rhythm is found.
pub fn window_hrv(raw: &RawWindow, cfg: &FeaturizeConfig) -> Option<HrvFeatures> {
    let ppg = raw.ppg(&cfg.sampling)?;
    if let Some(mag) = accel_magnitude(raw) {
        if let Ok(false) = sema::is_wearing(&mag, raw.channel(Channel::AccelX)?.rate_hz, &cfg.wear) {
            return None;
        }
    }
    let clean = signal::bandpass_filter(ppg, &cfg.filter).ok()?;
    let peaks = hrv::detect_peaks_with(
        &clean,
        &PeakConfig {
            baseline_seconds: cfg.smoothing_seconds,
            ..cfg.peaks.clone()
        },
    )
    .ok()?;
    hrv::features_from_peaks(&peaks).ok()
}

/// Accelerometer magnitude when all three axes are present with equal length.
pub fn accel_magnitude(raw: &RawWindow) -> Option<Vec<f64>> {
    let x = raw.channel(Channel::AccelX)?;
    let y = raw.channel(Channel::AccelY)?;
    let z = raw.channel(Channel::AccelZ)?;
    if x.samples.len() != y.samples.len() || x.samples.len() != z.samples.len() {
        return None;
    }
    Some(
        x.samples
            .iter()
            .zip(&y.samples)
            .zip(&z.samples)
            .map(|((a, b), c)| libm::sqrt(a * a + b * b + c * c))
            .collect(),
    )
}

pub fn featurize_window(user_id: &str, raw: &RawWindow, cfg: &FeaturizeConfig) -> FeatureWindow {
    FeatureWindow {
        user_id: user_id.to_string(),
        window_start: raw.slot_start,
        hrv: window_hrv(raw, cfg),
        context: extract_context_features(&raw.context, &cfg.schema),
        label5: None,
        label2: None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub user_id: String,
    pub window_start: EpochMs,
}

/// Rectangular feature table; `None` cells are missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub keys: Vec<RowKey>,
    pub values: Vec<Vec<Option<f64>>>,
    pub label5: Vec<Option<u8>>,
    pub labels: Vec<Option<u8>>,
}

/// All 24 feature columns: HRV first, then context.
pub fn all_columns() -> Vec<String> {
    HRV_FEATURES.iter().chain(CONTEXT_FEATURES.iter()).map(|s| s.to_string()).collect()
}

/// Column subsets matching the two data conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    All,
    Ppg,
    Context,
}

impl FeatureSet {
    pub fn columns(self) -> Vec<String> {
        let names: &[&str] = match self {
            FeatureSet::All => return all_columns(),
            FeatureSet::Ppg => &HRV_FEATURES,
            FeatureSet::Context => &CONTEXT_FEATURES,
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// Builds the matrix with rows sorted by `(user_id, window_start)`.
pub fn assemble(windows: &[FeatureWindow]) -> FeatureMatrix {
    let mut sorted: Vec<&FeatureWindow> = windows.iter().collect();
    sorted.sort_by(|a, b| (&a.user_id, a.window_start).cmp(&(&b.user_id, b.window_start)));
    let mut m = FeatureMatrix::empty(all_columns());
    for w in sorted {
        let hrv = w.hrv.map_or([None; 12], |h| h.to_array());
        let mut row: Vec<Option<f64>> = hrv.to_vec();
        row.extend_from_slice(&w.context);
        m.keys.push(RowKey {
            user_id: w.user_id.clone(),
            window_start: w.window_start,
        });
        m.values.push(row);
        m.label5.push(w.label5);
        m.labels.push(w.label2);
    }
    m
}

impl FeatureMatrix {
    pub fn empty(columns: Vec<String>) -> Self {
        Self {
            columns,
            keys: Vec::new(),
            values: Vec::new(),
            label5: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn groups(&self) -> Vec<&str> {
        self.keys.iter().map(|k| k.user_id.as_str()).collect()
    }

    /// Distinct users in sorted order.
    pub fn users(&self) -> Vec<String> {
        let mut u: Vec<String> = self.keys.iter().map(|k| k.user_id.clone()).collect();
        u.sort();
        u.dedup();
        u
    }

    /// Observed-cell mask.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.values.iter().map(|r| r.iter().map(Option::is_some).collect()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|r| r.iter().all(Option::is_some))
    }

    /// Dense values; `None` if any cell is missing.
    pub fn dense(&self) -> Option<Vec<Vec<f64>>> {
        self.values.iter().map(|r| r.iter().copied().collect::<Option<Vec<f64>>>()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Self, DatasetError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n.as_ref()).ok_or_else(|| DatasetError::UnknownColumn(n.as_ref().to_string())))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            columns: idx.iter().map(|&i| self.columns[i].clone()).collect(),
            keys: self.keys.clone(),
            values: self.values.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect(),
            label5: self.label5.clone(),
            labels: self.labels.clone(),
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            keys: rows.iter().map(|&i| self.keys[i].clone()).collect(),
            values: rows.iter().map(|&i| self.values[i].clone()).collect(),
            label5: rows.iter().map(|&i| self.label5[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> Self {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&i| keep(i)).collect();
        self.select_rows(&rows)
    }

    /// Rows with a binary label and every HRV column that is present observed
    /// except possibly `br`. These are the rows usable for training.
    pub fn trainable(&self) -> Self {
        let hrv_idx: Vec<usize> = HRV_FEATURES
            .iter()
            .filter(|n| **n != "br")
            .filter_map(|n| self.column_index(n))
            .collect();
        self.filter_rows(|i| self.labels[i].is_some() && hrv_idx.iter().all(|&c| self.values[i][c].is_some()))
    }

    pub fn push_row(&mut self, key: RowKey, row: Vec<Option<f64>>, label5: Option<u8>) -> Result<(), DatasetError> {
        if row.len() != self.n_cols() {
            return Err(DatasetError::Shape {
                expected: self.n_cols(),
                got: row.len(),
            });
        }
        let label = match label5 {
            Some(l) => Some(binarize(l)?),
            None => None,
        };
        self.keys.push(key);
        self.values.push(row);
        self.label5.push(label5);
        self.labels.push(label);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const H: i64 = HOUR_MS;
    const M: i64 = crate::MINUTE_MS;

    fn window(user: &str, start: EpochMs) -> FeatureWindow {
        FeatureWindow {
            user_id: user.into(),
            window_start: start,
            hrv: None,
            context: [None; 12],
            label5: None,
            label2: None,
        }
    }

    fn ema(user: &str, t: EpochMs, level: u8) -> EmaResponse {
        EmaResponse {
            user_id: user.into(),
            timestamp: t,
            stress_level: level,
        }
    }

    #[test]
    fn binarize_rule() {
        assert_eq!(binarize(1), Ok(0));
        assert_eq!(binarize(4), Ok(1));
        assert_eq!(binarize(0), Err(DatasetError::OutOfRange(0)));
        assert_eq!(binarize(6), Err(DatasetError::OutOfRange(6)));
    }

    #[test]
    fn binarize_reported_distribution() {
        let counts = [288usize, 142, 120, 20, 21];
        let mut zeros = 0;
        let mut ones = 0;
        for (level, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                match binarize(level as u8 + 1).unwrap() {
                    0 => zeros += 1,
                    _ => ones += 1,
                }
            }
        }
        assert_eq!((zeros, ones), (288, 303));
    }

    #[test]
    fn closest_subsequent_ema() {
        let mut w = vec![window("a", 10 * H)];
        label_windows(&mut w, &[ema("a", 11 * H, 1), ema("a", 10 * H + 20 * M, 3)], DEFAULT_LABEL_HORIZON_MS);
        assert_eq!(w[0].label5, Some(3));
        assert_eq!(w[0].label2, Some(1));
    }

    #[test]
    fn ema_at_window_start_counts() {
        let mut w = vec![window("a", 10 * H)];
        label_windows(&mut w, &[ema("a", 10 * H, 1)], DEFAULT_LABEL_HORIZON_MS);
        assert_eq!(w[0].label5, Some(1));
        assert_eq!(w[0].label2, Some(0));
    }

    #[test]
    fn no_label_after_last_ema_or_from_other_user() {
        let mut w = vec![window("a", 12 * H), window("b", 9 * H)];
        label_windows(&mut w, &[ema("a", 11 * H, 2), ema("c", 9 * H + M, 2)], DEFAULT_LABEL_HORIZON_MS);
        assert_eq!(w[0].label5, None);
        assert_eq!(w[1].label5, None);
    }

    #[test]
    fn horizon_excludes_distant_ema() {
        let mut w = vec![window("a", 0)];
        label_windows(&mut w, &[ema("a", 9 * H, 2)], DEFAULT_LABEL_HORIZON_MS);
        assert_eq!(w[0].label5, None);
    }

    #[test]
    fn assemble_orders_rows() {
        let ws = vec![window("u2", 0), window("u1", 5), window("u2", -5), window("u1", 0), window("u1", 10), window("u2", 5)];
        let m = assemble(&ws);
        assert_eq!(m.n_rows(), 6);
        assert_eq!(m.n_cols(), 24);
        assert_eq!(m.groups(), vec!["u1", "u1", "u1", "u2", "u2", "u2"]);
        assert_eq!(m.keys[3].window_start, -5);
        // missing hrv masks the hrv columns
        assert!(m.mask()[0][..12].iter().all(|o| !o));
    }

    #[test]
    fn assemble_empty_keeps_header() {
        let m = assemble(&[]);
        assert_eq!(m.n_rows(), 0);
        assert_eq!(m.columns[0], "bpm");
        assert_eq!(m.columns[23], "location");
    }

    #[test]
    fn column_selection() {
        let m = assemble(&[window("a", 0)]);
        let p = m.select_columns(&FeatureSet::Ppg.columns()).unwrap();
        assert_eq!(p.n_cols(), 12);
        assert!(m.select_columns(&["nope"]).is_err());
    }
}
