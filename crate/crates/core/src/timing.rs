//! Offline timing analysis of protocol timelines.
//!
//! Times are held as whole milliseconds so that interval sums are exact and
//! report rounding does not depend on binary floating point.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TimingError {
    #[error("timeline `{label}` needs at least 2 events, found {found}")]
    TooShort { label: String, found: usize },
    #[error("timeline `{label}`: `{event}` at {time_s}s does not follow the previous event")]
    NonMonotone { label: String, event: String, time_s: f64 },
    #[error("timeline `{label}`: invalid time {value}")]
    InvalidTime { label: String, value: f64 },
    #[error("timeline `{label}` has events {found:?}, expected {expected:?}")]
    Ragged { label: String, expected: Vec<String>, found: Vec<String> },
    #[error("no timelines to summarize")]
    Empty,
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("listener compute time must be positive, got {0}")]
    InvalidListener(f64),
    #[error("invalid pause window [{lower}, {upper}]")]
    InvalidWindow { lower: f64, upper: f64 },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

fn to_millis(secs: f64) -> i64 {
    (secs * 1000.0).round() as i64
}

fn to_secs(ms: i64) -> f64 {
    ms as f64 / 1000.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    label: String,
    events: Vec<(String, i64)>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    event: String,
    time_s: f64,
}

impl Timeline {
    pub fn new(label: impl Into<String>, events: Vec<(String, f64)>) -> Result<Self, TimingError> {
        let label = label.into();
        if events.len() < 2 {
            return Err(TimingError::TooShort { label, found: events.len() });
        }
        let mut out: Vec<(String, i64)> = Vec::with_capacity(events.len());
        for (event, time_s) in events {
            if !time_s.is_finite() {
                return Err(TimingError::InvalidTime { label, value: time_s });
            }
            let ms = to_millis(time_s);
            if out.last().is_some_and(|(_, prev)| ms <= *prev) {
                return Err(TimingError::NonMonotone { label, event, time_s });
            }
            out.push((event, ms));
        }
        Ok(Self { label, events: out })
    }

    /// Reads an `event,time_s` CSV file; the label is the file stem.
    pub fn load(path: &Path) -> Result<Self, TimingError> {
        let shown = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|source| TimingError::Csv { path: shown.clone(), source })?;
        let mut events = Vec::new();
        for row in reader.deserialize::<CsvRow>() {
            let row = row.map_err(|source| TimingError::Csv { path: shown.clone(), source })?;
            events.push((row.event, row.time_s));
        }
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(shown);
        Self::new(label, events)
    }

    /// Every `*.csv` file in `dir`, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, TimingError> {
        let io = |source| TimingError::Io { path: dir.display().to_string(), source };
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                paths.push(path);
            }
        }
        paths.sort();
        paths.iter().map(|p| Self::load(p)).collect()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn event_names(&self) -> Vec<&str> {
        self.events.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|(_, t)| to_secs(*t)).collect()
    }

    pub fn first_time(&self) -> f64 {
        to_secs(self.events[0].1)
    }

    pub fn last_time(&self) -> f64 {
        to_secs(self.events[self.events.len() - 1].1)
    }

    fn step_millis(&self) -> impl Iterator<Item = i64> + '_ {
        self.events.windows(2).map(|w| w[1].1 - w[0].1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub from: String,
    pub to: String,
    pub duration_s: f64,
}

pub fn intervals(t: &Timeline) -> Vec<Interval> {
    t.events
        .windows(2)
        .map(|w| Interval { from: w[0].0.clone(), to: w[1].0.clone(), duration_s: to_secs(w[1].1 - w[0].1) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseClass {
    Short,
    Substantial,
    Long,
}

/// Closed window of a substantial pause, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauseWindow {
    lower: f64,
    upper: f64,
}

impl PauseWindow {
    pub const DEFAULT: PauseWindow = PauseWindow { lower: 0.6, upper: 0.8 };

    pub fn new(lower: f64, upper: f64) -> Result<Self, TimingError> {
        if !(lower.is_finite() && upper.is_finite() && 0.0 <= lower && lower <= upper) {
            return Err(TimingError::InvalidWindow { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn classify(&self, duration_s: f64) -> Result<PauseClass, TimingError> {
        if duration_s.is_nan() || duration_s < 0.0 {
            return Err(TimingError::NegativeDuration(duration_s));
        }
        Ok(if duration_s < self.lower {
            PauseClass::Short
        } else if duration_s <= self.upper {
            PauseClass::Substantial
        } else {
            PauseClass::Long
        })
    }
}

impl Default for PauseWindow {
    fn default() -> Self {
        Self::DEFAULT
    }
}

pub fn classify_pause(duration_s: f64) -> Result<PauseClass, TimingError> {
    PauseWindow::DEFAULT.classify(duration_s)
}

/// Per-column step averages over timelines sharing one event sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub columns: Vec<String>,
    /// Full-precision means in seconds.
    pub averages: Vec<f64>,
    /// Means rounded half-up to hundredths of a second, as integers.
    pub rounded_centis: Vec<i64>,
}

impl Summary {
    pub fn rounded(&self) -> Vec<f64> {
        self.rounded_centis.iter().map(|c| *c as f64 / 100.0).collect()
    }
}

/// Half-up rounding of `sum_ms / n` milliseconds to centiseconds.
fn round_mean_to_centis(sum_ms: i64, n: i64) -> i64 {
    // mean_cs = sum_ms / (10 n); adding half the divisor rounds half away from zero.
    let div = 10 * n;
    if sum_ms >= 0 {
        (sum_ms + div / 2) / div
    } else {
        -((-sum_ms + div / 2) / div)
    }
}

pub fn summarize(timelines: &[Timeline]) -> Result<Summary, TimingError> {
    let first = timelines.first().ok_or(TimingError::Empty)?;
    let names = first.event_names();
    for t in &timelines[1..] {
        if t.event_names() != names {
            return Err(TimingError::Ragged {
                label: t.label.clone(),
                expected: names.iter().map(|s| s.to_string()).collect(),
                found: t.event_names().iter().map(|s| s.to_string()).collect(),
            });
        }
    }
    let mut sums = vec![0i64; names.len() - 1];
    for t in timelines {
        for (sum, step) in sums.iter_mut().zip(t.step_millis()) {
            *sum += step;
        }
    }
    let n = timelines.len() as i64;
    Ok(Summary {
        columns: names.windows(2).map(|w| w[1].to_string()).collect(),
        averages: sums.iter().map(|s| to_secs(*s) / n as f64).collect(),
        rounded_centis: sums.iter().map(|s| round_mean_to_centis(*s, n)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AnticipationRisk {
    Missed,
    Optimal,
    Anticipation,
}

/// How long the listener needs to compute R (`c`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListenerModel {
    compute_time_s: f64,
}

impl ListenerModel {
    pub fn new(compute_time_s: f64) -> Result<Self, TimingError> {
        if !(compute_time_s.is_finite() && compute_time_s > 0.0) {
            return Err(TimingError::InvalidListener(compute_time_s));
        }
        Ok(Self { compute_time_s })
    }

    pub fn compute_time_s(&self) -> f64 {
        self.compute_time_s
    }
}

/// Grace window after `c` uses the substantial-pause upper bound.
pub fn anticipation_risk(interval_s: f64, m: ListenerModel) -> AnticipationRisk {
    anticipation_risk_with(interval_s, m, PauseWindow::DEFAULT.upper)
}

pub fn anticipation_risk_with(interval_s: f64, m: ListenerModel, grace_s: f64) -> AnticipationRisk {
    let c = m.compute_time_s;
    if interval_s < c {
        AnticipationRisk::Missed
    } else if interval_s <= c + grace_s {
        AnticipationRisk::Optimal
    } else {
        AnticipationRisk::Anticipation
    }
}

fn signed_secs(ms: i64) -> String {
    format!("{}{}.{:03}", if ms < 0 { "-" } else { "+" }, ms.abs() / 1000, ms.abs() % 1000)
}

fn signed_centis(cs: i64) -> String {
    format!("{}{}.{:02}", if cs < 0 { "-" } else { "+" }, cs.abs() / 100, cs.abs() % 100)
}

/// Plain-text table: one row per timeline with absolute start and per-step
/// durations, then the rounded averages. Column widths depend only on input.
pub fn render_report(timelines: &[Timeline]) -> Result<String, TimingError> {
    let summary = summarize(timelines)?;
    let first = &timelines[0];
    let mut header = vec!["Timeline".to_string(), first.events[0].0.clone()];
    header.extend(summary.columns.iter().cloned());

    let mut rows: Vec<Vec<String>> = Vec::new();
    for t in timelines {
        let mut row = vec![t.label.clone(), format!("{}.{:03}", t.events[0].1 / 1000, t.events[0].1 % 1000)];
        row.extend(t.step_millis().map(signed_secs));
        rows.push(row);
    }

    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let joined: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", joined.join("  ").trim_end());
    };
    line(&header, &mut out);
    for row in &rows {
        line(row, &mut out);
    }
    let avgs: Vec<String> = summary.rounded_centis.iter().map(|c| signed_centis(*c)).collect();
    let _ = writeln!(out, "Average step  {}", avgs.join("  "));
    Ok(out)
}
