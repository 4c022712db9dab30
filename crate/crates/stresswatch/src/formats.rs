//! On-disk formats: JSONL bursts and context, EMA and trigger logs, the
//! latent trace, the feature matrix with its sidecar, and JSON documents.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use stresswatch_core::context::ContextSnapshot;
use stresswatch_core::dataset::{EmaResponse, FeatureMatrix, RowKey, Weighting};
use stresswatch_core::explain::BeeswarmRecord;
use stresswatch_core::learn::EvalReport;
use stresswatch_core::sema::TriggerRecord;
use stresswatch_core::signal::{Channel, SensorBurst};
use stresswatch_core::EpochMs;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

impl FormatError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, line: usize, message: impl ToString) -> Self {
        FormatError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        }
    }
}

/// One line of the burst log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstRecord {
    pub user_id: String,
    pub channel: Channel,
    pub start_time_ms: EpochMs,
    pub rate_hz: f64,
    pub samples: Vec<f64>,
    /// Time the cloud stored the burst, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_time_ms: Option<EpochMs>,
}

impl BurstRecord {
    pub fn to_burst(&self) -> SensorBurst {
        SensorBurst::new(self.channel, self.start_time_ms, self.rate_hz, self.samples.clone())
    }
}

/// One row of the latent stress trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSegment {
    pub start_ms: EpochMs,
    pub end_ms: EpochMs,
    pub stress: u8,
}

fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| FormatError::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| FormatError::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), FormatError> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| FormatError::parse(path, 0, e))?;
        w.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// Reads a JSONL file; blank lines are skipped. A missing file reads as
/// empty when `optional` is set.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, optional: bool) -> Result<Vec<T>, FormatError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if optional && e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(FormatError::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FormatError::parse(path, i + 1, e))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| FormatError::parse(path, 0, e))?;
    w.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FormatError::parse(path, e.line(), e))
}

pub fn write_bursts(path: &Path, bursts: &[BurstRecord]) -> Result<(), FormatError> {
    write_jsonl(path, bursts)
}

pub fn read_bursts(path: &Path, optional: bool) -> Result<Vec<BurstRecord>, FormatError> {
    let recs: Vec<BurstRecord> = read_jsonl(path, optional)?;
    for (i, r) in recs.iter().enumerate() {
        if !r.to_burst().is_valid() {
            return Err(FormatError::parse(path, i + 1, "burst needs samples and a positive rate"));
        }
    }
    Ok(recs)
}

pub fn write_context(path: &Path, snaps: &[ContextSnapshot]) -> Result<(), FormatError> {
    write_jsonl(path, snaps)
}

pub fn read_context(path: &Path, optional: bool) -> Result<Vec<ContextSnapshot>, FormatError> {
    read_jsonl(path, optional)
}

pub fn write_triggers(path: &Path, recs: &[TriggerRecord]) -> Result<(), FormatError> {
    write_jsonl(path, recs)
}

pub fn read_triggers(path: &Path) -> Result<Vec<TriggerRecord>, FormatError> {
    read_jsonl(path, false)
}

fn csv_err(path: &Path, e: csv::Error) -> FormatError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    FormatError::parse(path, line, e)
}

fn write_csv_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), FormatError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

fn read_csv_rows<T: DeserializeOwned>(path: &Path, optional: bool) -> Result<Vec<T>, FormatError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if optional && e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(FormatError::io(path, e)),
    };
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct EmaRow {
    timestamp_ms: EpochMs,
    user_id: String,
    stress_level: u8,
}

pub fn write_ema(path: &Path, emas: &[EmaResponse]) -> Result<(), FormatError> {
    let rows: Vec<EmaRow> = emas
        .iter()
        .map(|e| EmaRow {
            timestamp_ms: e.timestamp,
            user_id: e.user_id.clone(),
            stress_level: e.stress_level,
        })
        .collect();
    write_csv_rows(path, &["timestamp_ms", "user_id", "stress_level"], &rows)
}

pub fn read_ema(path: &Path, optional: bool) -> Result<Vec<EmaResponse>, FormatError> {
    let rows: Vec<EmaRow> = read_csv_rows(path, optional)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if !(1..=5).contains(&r.stress_level) {
                return Err(FormatError::parse(path, i + 2, format!("stress level {} outside 1..5", r.stress_level)));
            }
            Ok(EmaResponse {
                user_id: r.user_id,
                timestamp: r.timestamp_ms,
                stress_level: r.stress_level,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct LatentRow {
    user_id: String,
    start_ms: EpochMs,
    end_ms: EpochMs,
    stress: u8,
}

pub fn write_latent(path: &Path, trace: &[(String, LatentSegment)]) -> Result<(), FormatError> {
    let rows: Vec<LatentRow> = trace
        .iter()
        .map(|(u, s)| LatentRow {
            user_id: u.clone(),
            start_ms: s.start_ms,
            end_ms: s.end_ms,
            stress: s.stress,
        })
        .collect();
    write_csv_rows(path, &["user_id", "start_ms", "end_ms", "stress"], &rows)
}

pub fn read_latent(path: &Path) -> Result<Vec<(String, LatentSegment)>, FormatError> {
    let rows: Vec<LatentRow> = read_csv_rows(path, false)?;
    Ok(rows
        .into_iter()
        .map(|r| {
            (
                r.user_id,
                LatentSegment {
                    start_ms: r.start_ms,
                    end_ms: r.end_ms,
                    stress: r.stress,
                },
            )
        })
        .collect())
}

pub const GROUP_COLUMN: &str = "user_id";
pub const TIME_COLUMN: &str = "window_start_ms";
pub const LABEL5_COLUMN: &str = "label5";
pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationSettings {
    pub k: usize,
    pub weighting: Weighting,
}

/// Companion document written next to a feature-matrix CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub label_column: String,
    pub group_column: String,
    pub time_column: String,
    pub feature_columns: Vec<String>,
    pub n_rows: usize,
    /// Missing cells per feature column.
    pub missing: Vec<usize>,
    pub imputation: ImputationSettings,
}

impl MatrixSidecar {
    pub fn describe(m: &FeatureMatrix, imputation: ImputationSettings) -> Self {
        Self {
            label_column: LABEL_COLUMN.into(),
            group_column: GROUP_COLUMN.into(),
            time_column: TIME_COLUMN.into(),
            feature_columns: m.columns.clone(),
            n_rows: m.n_rows(),
            missing: (0..m.n_cols())
                .map(|c| m.values.iter().filter(|r| r[c].is_none()).count())
                .collect(),
            imputation,
        }
    }
}

fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes the matrix CSV. Floats use the shortest representation that
/// reads back to the same value; missing cells are empty.
pub fn write_matrix(path: &Path, m: &FeatureMatrix) -> Result<(), FormatError> {
    let mut w = csv::WriterBuilder::new().from_writer(create(path)?);
    let mut header = vec![GROUP_COLUMN.to_string(), TIME_COLUMN.to_string()];
    header.extend(m.columns.iter().cloned());
    header.push(LABEL5_COLUMN.into());
    header.push(LABEL_COLUMN.into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..m.n_rows() {
        let mut rec = vec![m.keys[i].user_id.clone(), m.keys[i].window_start.to_string()];
        rec.extend(m.values[i].iter().map(|v| opt_cell(*v)));
        rec.push(opt_cell(m.label5[i]));
        rec.push(opt_cell(m.labels[i]));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<FeatureMatrix, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let n = header.len();
    let fixed = [GROUP_COLUMN, TIME_COLUMN];
    if n < 4 || header[0] != fixed[0] || header[1] != fixed[1] || header[n - 2] != LABEL5_COLUMN || header[n - 1] != LABEL_COLUMN {
        return Err(FormatError::parse(
            path,
            1,
            "header must be user_id, window_start_ms, features..., label5, label",
        ));
    }
    let mut m = FeatureMatrix::empty(header[2..n - 2].to_vec());
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |s: &str| -> Result<Option<f64>, FormatError> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| FormatError::parse(path, line, format!("not a number: {s:?}")))
        };
        let start: EpochMs = rec[1]
            .parse()
            .map_err(|_| FormatError::parse(path, line, format!("bad window start {:?}", &rec[1])))?;
        let values = (2..n - 2).map(|c| num(&rec[c])).collect::<Result<Vec<_>, _>>()?;
        let label5 = match &rec[n - 2] {
            "" => None,
            s => Some(s.parse::<u8>().map_err(|_| FormatError::parse(path, line, format!("bad label5 {s:?}")))?),
        };
        m.push_row(
            RowKey {
                user_id: rec[0].to_string(),
                window_start: start,
            },
            values,
            label5,
        )
        .map_err(|e| FormatError::parse(path, line, e))?;
        if rec[n - 1].is_empty() != label5.is_none()
            || (!rec[n - 1].is_empty() && rec[n - 1].parse::<u8>().ok() != m.labels[m.n_rows() - 1])
        {
            return Err(FormatError::parse(path, line, "label disagrees with label5"));
        }
    }
    Ok(m)
}

pub fn write_report(json: &Path, csv_path: &Path, report: &EvalReport) -> Result<(), FormatError> {
    write_json(json, report)?;
    let mut text = String::from("fold,n_train,n_test,f1,precision,recall,tp,fp,fn,tn,degenerate\n");
    for f in &report.folds {
        let c = &f.confusion;
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{}",
            f.fold, f.n_train, f.n_test, f.f1, f.precision, f.recall, c.tp, c.fp, c.fn_, c.tn, f.degenerate
        );
    }
    let c = &report.confusion;
    let n_test: usize = report.folds.iter().map(|f| f.n_test).sum();
    let _ = writeln!(
        text,
        "mean,,{n_test},{},{},{},{},{},{},{},",
        report.mean_f1,
        c.precision(),
        c.recall(),
        c.tp,
        c.fp,
        c.fn_,
        c.tn
    );
    std::fs::write(csv_path, text).map_err(|e| FormatError::io(csv_path, e))
}

pub fn write_beeswarm(path: &Path, recs: &[BeeswarmRecord]) -> Result<(), FormatError> {
    write_csv_rows(path, &["row", "feature", "shap", "feature_value"], recs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub feature: String,
    pub mean_abs_shap: f64,
}
