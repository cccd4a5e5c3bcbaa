//! Gaze recording files and the subject × round × session × task manifest.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

/// Native sampling rate of the reference data set.
pub const NATIVE_RATE_HZ: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "HSS")]
    Hss,
    #[serde(rename = "VD1")]
    Vd1,
    #[serde(rename = "FXS")]
    Fxs,
    #[serde(rename = "RAN")]
    Ran,
    #[serde(rename = "TEX")]
    Tex,
    #[serde(rename = "BLG")]
    Blg,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::Hss, Task::Vd1, Task::Fxs, Task::Ran, Task::Tex, Task::Blg];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Hss => "HSS",
            Task::Vd1 => "VD1",
            Task::Fxs => "FXS",
            Task::Ran => "RAN",
            Task::Tex => "TEX",
            Task::Blg => "BLG",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown task `{s}`")))
    }
}

/// One gaze sample. Positions are in degrees of visual angle; `None` marks
/// a missing value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Option<f64>,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordingKey {
    pub subject_id: String,
    pub round: u8,
    pub session: u8,
    pub task: Task,
}

impl fmt::Display for RecordingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}_R{}_S{}_{}",
            self.subject_id, self.round, self.session, self.task
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub key: RecordingKey,
    pub rate_hz: f64,
    pub samples: Vec<Sample>,
}

impl RawRecording {
    /// Checks the type invariants: non-empty, positive rate, strictly
    /// increasing timestamps.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyRecording);
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!("rate_hz {} not positive", self.rate_hz)));
        }
        for (i, w) in self.samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::NonMonotoneTimestamps { row: i + 1 });
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Milliseconds,
}

impl TimeUnit {
    fn to_seconds(self, v: f64) -> f64 {
        match self {
            TimeUnit::Seconds => v,
            TimeUnit::Milliseconds => v / 1000.0,
        }
    }

    fn from_seconds(self, v: f64) -> f64 {
        match self {
            TimeUnit::Seconds => v,
            TimeUnit::Milliseconds => v * 1000.0,
        }
    }
}

/// Header-name mapping for the timestamp and position columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub timestamp: String,
    pub x: String,
    pub y: String,
    pub time_unit: TimeUnit,
    pub delimiter: char,
}

impl ColumnMap {
    /// GazeBase CSV layout: `n` (ms), `x`, `y` in degrees.
    pub fn gazebase() -> Self {
        Self {
            timestamp: "n".into(),
            x: "x".into(),
            y: "y".into(),
            time_unit: TimeUnit::Milliseconds,
            delimiter: ',',
        }
    }

    pub fn seconds(timestamp: &str, x: &str, y: &str) -> Self {
        Self {
            timestamp: timestamp.into(),
            x: x.into(),
            y: y.into(),
            time_unit: TimeUnit::Seconds,
            delimiter: ',',
        }
    }

    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .map_err(|_| Error::InvalidInput(format!("delimiter {:?} is not ASCII", self.delimiter)))
    }
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self::gazebase()
    }
}

fn is_missing_token(cell: &str) -> bool {
    matches!(cell, "" | "NaN" | "nan")
}

fn parse_position(cell: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if is_missing_token(cell) {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| Error::MalformedRow {
        row,
        reason: format!("non-numeric `{cell}` in column `{column}`"),
    })?;
    Ok(v.is_finite().then_some(v))
}

/// Parses one delimited-text recording. Row numbers in errors are 1-based
/// data rows (the header is row 0).
pub fn parse_recording(
    bytes: &[u8],
    columns: &ColumnMap,
    key: RecordingKey,
    rate_hz: f64,
) -> Result<RawRecording> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(columns.delimiter_byte()?)
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);

    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ti = find(&columns.timestamp)?;
    let xi = find(&columns.x)?;
    let yi = find(&columns.y)?;

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let t_cell = record.get(ti).unwrap_or("");
        let t: f64 = t_cell.parse().map_err(|_| Error::MalformedRow {
            row,
            reason: format!("non-numeric timestamp `{t_cell}`"),
        })?;
        if !t.is_finite() {
            return Err(Error::MalformedRow {
                row,
                reason: format!("non-finite timestamp `{t_cell}`"),
            });
        }
        let x = parse_position(record.get(xi).unwrap_or(""), row, &columns.x)?;
        let y = parse_position(record.get(yi).unwrap_or(""), row, &columns.y)?;
        samples.push(Sample {
            t: columns.time_unit.to_seconds(t),
            x,
            y,
        });
    }

    let rec = RawRecording {
        key,
        rate_hz,
        samples,
    };
    rec.validate()?;
    Ok(rec)
}

/// Writes a recording in the layout described by `columns`. Missing
/// positions are written as `NaN`; finite values use the shortest
/// round-tripping decimal form.
pub fn write_recording(rec: &RawRecording, columns: &ColumnMap) -> Result<Vec<u8>> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(columns.delimiter_byte()?)
        .from_writer(Vec::new());
    writer.write_record([&columns.timestamp, &columns.x, &columns.y])?;
    let fmt_pos = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |v| v.to_string());
    for s in &rec.samples {
        writer.write_record([
            columns.time_unit.from_seconds(s.t).to_string(),
            fmt_pos(s.x),
            fmt_pos(s.y),
        ])?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::io("<buffer>", e.into_error()))
}

pub fn read_recording(path: &Path, columns: &ColumnMap, key: RecordingKey, rate_hz: f64) -> Result<RawRecording> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_recording(&bytes, columns, key, rate_hz)
}

/// File-name rule with named capture groups `subject`, `round`, `session`
/// and `task`. Files with `extension` that do not match are an error;
/// files with other extensions are ignored.
#[derive(Debug, Clone)]
pub struct NamingRule {
    pattern: Regex,
    extension: String,
}

impl NamingRule {
    pub fn new(pattern: &str, extension: &str) -> Result<Self> {
        let pattern = Regex::new(pattern)
            .map_err(|e| Error::InvalidInput(format!("bad naming pattern: {e}")))?;
        for group in ["subject", "round", "session", "task"] {
            if !pattern.capture_names().flatten().any(|n| n == group) {
                return Err(Error::InvalidInput(format!(
                    "naming pattern lacks `{group}` group"
                )));
            }
        }
        Ok(Self {
            pattern,
            extension: extension.trim_start_matches('.').to_string(),
        })
    }

    /// GazeBase names such as `S_1001_S1_TEX.csv`: round digit, then a
    /// three-digit subject number.
    pub fn gazebase() -> Self {
        Self::new(
            r"^S_(?P<round>\d)(?P<subject>\d{3})_S(?P<session>\d)_(?P<task>[A-Z0-9]+)\.csv$",
            "csv",
        )
        .expect("preset pattern is valid")
    }

    pub fn pattern(&self) -> &str {
        self.pattern.as_str()
    }

    pub fn extension(&self) -> &str {
        &self.extension
    }

    /// `Ok(None)` when the name parses but names a task outside [`Task`].
    pub fn parse(&self, file_name: &str) -> Result<Option<RecordingKey>> {
        let caps = self
            .pattern
            .captures(file_name)
            .ok_or_else(|| Error::UnparseableName(file_name.to_string()))?;
        let bad = || Error::UnparseableName(file_name.to_string());
        let round: u8 = caps["round"].parse().map_err(|_| bad())?;
        let session: u8 = caps["session"].parse().map_err(|_| bad())?;
        if !(1..=9).contains(&round) || !(1..=2).contains(&session) {
            return Err(bad());
        }
        let task = match caps["task"].parse::<Task>() {
            Ok(t) => t,
            Err(_) => return Ok(None),
        };
        Ok(Some(RecordingKey {
            subject_id: caps["subject"].to_string(),
            round,
            session,
            task,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: String,
    pub round: u8,
    pub session: u8,
    pub task: Task,
    pub path: PathBuf,
    pub n_samples: usize,
}

impl ManifestEntry {
    pub fn key(&self) -> RecordingKey {
        RecordingKey {
            subject_id: self.subject.clone(),
            round: self.round,
            session: self.session,
            task: self.task,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Sorts entries by key and rejects duplicate keys.
    pub fn from_entries(mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.key().cmp(&b.key()).then_with(|| a.path.cmp(&b.path)));
        for w in entries.windows(2) {
            if w[0].key() == w[1].key() {
                return Err(Error::DuplicateKey(w[0].key().to_string()));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_task(&self, task: Task) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.task == task)
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.subject.as_str()).collect()
    }

    /// Subjects present in round `r` whose round `r − 1` entry is absent.
    /// Reported, never enforced.
    pub fn round_gaps(&self, task: Task) -> Vec<(String, u8)> {
        let present: BTreeSet<(&str, u8)> = self
            .for_task(task)
            .map(|e| (e.subject.as_str(), e.round))
            .collect();
        present
            .iter()
            .filter(|(s, r)| *r > 1 && !present.contains(&(*s, r - 1)))
            .map(|(s, r)| (s.to_string(), *r))
            .collect()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subject", "round", "session", "task", "path", "n_samples"])?;
        for e in &self.entries {
            w.write_record([
                e.subject.clone(),
                e.round.to_string(),
                e.session.to_string(),
                e.task.to_string(),
                e.path.to_string_lossy().into_owned(),
                e.n_samples.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::io("<buffer>", e.into_error()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let mut entries = Vec::new();
        for rec in r.deserialize() {
            entries.push(rec?);
        }
        Self::from_entries(entries)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&bytes)
    }
}

fn count_data_rows(path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
}

/// Walks `root` and builds a manifest. Ordering is by key, so the result
/// depends only on directory contents.
pub fn scan_manifest(root: &Path, rule: &NamingRule) -> Result<Manifest> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut entries = Vec::new();
    for item in WalkDir::new(root).sort_by_file_name() {
        let item = item.map_err(|e| Error::io(root, e.into()))?;
        if !item.file_type().is_file() {
            continue;
        }
        let path = item.path();
        if path.extension().and_then(|e| e.to_str()) != Some(rule.extension()) {
            continue;
        }
        let name = item.file_name().to_string_lossy();
        let Some(key) = rule.parse(&name)? else {
            log::debug!("skipping {} (task not used)", path.display());
            continue;
        };
        entries.push(ManifestEntry {
            subject: key.subject_id,
            round: key.round,
            session: key.session,
            task: key.task,
            path: path.to_path_buf(),
            n_samples: count_data_rows(path)?,
        });
    }
    Manifest::from_entries(entries)
}
