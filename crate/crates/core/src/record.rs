//! Session records and their CSV representation.
//!
//! Layout:
//!
//! ```text
//! # format_version=1
//! # seed=42
//! # source=sim:moderate
//! # window=50
//! # decimation=20
//! # profile=none
//! # config={"strategy":"on_off","th":50.0,...}
//! # plant={"max_rate":1.0,...}
//! # calibration={...}
//! t_ms,volts,raw,emg_percent,x_percent,reference,position
//! #EVENT 0 calibrate_rest {}
//! 0,0.0512,42,0,0,0,0
//! ...
//! ```
//!
//! An event line precedes the first row it affects. Floats are written in
//! shortest round-trip form, so export -> import -> export is byte-stable.

use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationProfile, CalibrationSettings};
use crate::control::ControlConfig;
use crate::error::RecordError;
use crate::plant::PlantParams;

pub const FORMAT_VERSION: u32 = 1;

pub const COLUMNS: [&str; 7] = [
    "t_ms",
    "volts",
    "raw",
    "emg_percent",
    "x_percent",
    "reference",
    "position",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format_version: u32,
    pub seed: u64,
    pub source: String,
    pub window: usize,
    pub decimation: u32,
    /// Profile active at session start, if any.
    pub profile: Option<CalibrationProfile>,
    pub config: ControlConfig,
    pub plant: PlantParams,
    pub calibration: CalibrationSettings,
}

/// One tick. `emg_percent` is 0 while uncalibrated; `position` is the
/// encoder reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub t_ms: u64,
    pub volts: f64,
    pub raw: u16,
    pub emg_percent: f64,
    pub x_percent: f64,
    pub reference: f64,
    pub position: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    Stop,
    SetConfig,
    SetStrategy,
    CalibrateRest,
    CalibrateMvc,
    /// Profile built from the capture windows.
    Calibrated,
    CalibrationFailed,
    /// Command refused; the payload holds the command and the reason.
    Rejected,
    /// Source exhausted or duration reached.
    End,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::Stop => "stop",
            EventKind::SetConfig => "set_config",
            EventKind::SetStrategy => "set_strategy",
            EventKind::CalibrateRest => "calibrate_rest",
            EventKind::CalibrateMvc => "calibrate_mvc",
            EventKind::Calibrated => "calibrated",
            EventKind::CalibrationFailed => "calibration_failed",
            EventKind::Rejected => "rejected",
            EventKind::End => "end",
        }
    }

    /// Whether the event is an operator command (replayed) rather than an
    /// outcome the engine derives on its own.
    pub fn is_command(self) -> bool {
        matches!(
            self,
            EventKind::Start
                | EventKind::Stop
                | EventKind::SetConfig
                | EventKind::SetStrategy
                | EventKind::CalibrateRest
                | EventKind::CalibrateMvc
        )
    }
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "start" => EventKind::Start,
            "stop" => EventKind::Stop,
            "set_config" => EventKind::SetConfig,
            "set_strategy" => EventKind::SetStrategy,
            "calibrate_rest" => EventKind::CalibrateRest,
            "calibrate_mvc" => EventKind::CalibrateMvc,
            "calibrated" => EventKind::Calibrated,
            "calibration_failed" => EventKind::CalibrationFailed,
            "rejected" => EventKind::Rejected,
            "end" => EventKind::End,
            other => return Err(format!("unknown event type {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// First row the event affects.
    pub t_ms: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

impl Event {
    pub fn new(t_ms: u64, kind: EventKind, payload: serde_json::Value) -> Self {
        Self { t_ms, kind, payload }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub header: SessionHeader,
    pub rows: Vec<Row>,
    pub events: Vec<Event>,
}

impl SessionRecord {
    pub fn new(header: SessionHeader) -> Self {
        Self {
            header,
            rows: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn duration_ms(&self) -> u64 {
        self.rows.len() as u64
    }

    pub fn reference(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.reference)
    }

    pub fn position(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.position)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        write_csv(self, &mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("header types serialize")
}

/// Incremental CSV writer shared by batch export and live recording.
pub struct CsvWriter<W: Write> {
    out: W,
    line: String,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            line: String::with_capacity(128),
        }
    }

    pub fn write_header(&mut self, h: &SessionHeader) -> std::io::Result<()> {
        let profile = match &h.profile {
            Some(p) => json(p),
            None => "none".to_string(),
        };
        writeln!(self.out, "# format_version={}", h.format_version)?;
        writeln!(self.out, "# seed={}", h.seed)?;
        writeln!(self.out, "# source={}", h.source)?;
        writeln!(self.out, "# window={}", h.window)?;
        writeln!(self.out, "# decimation={}", h.decimation)?;
        writeln!(self.out, "# profile={profile}")?;
        writeln!(self.out, "# config={}", json(&h.config))?;
        writeln!(self.out, "# plant={}", json(&h.plant))?;
        writeln!(self.out, "# calibration={}", json(&h.calibration))?;
        writeln!(self.out, "{}", COLUMNS.join(","))
    }

    pub fn write_event(&mut self, e: &Event) -> std::io::Result<()> {
        writeln!(self.out, "#EVENT {} {} {}", e.t_ms, e.kind, e.payload)
    }

    pub fn write_row(&mut self, r: &Row) -> std::io::Result<()> {
        self.line.clear();
        let _ = write!(
            self.line,
            "{},{},{},{},{},{},{}",
            r.t_ms, r.volts, r.raw, r.emg_percent, r.x_percent, r.reference, r.position
        );
        self.out.write_all(self.line.as_bytes())?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Writes a record: header, then rows with each event ahead of the first row
/// it affects, then any trailing events.
pub fn write_csv<W: Write>(record: &SessionRecord, out: W) -> std::io::Result<()> {
    let mut w = CsvWriter::new(out);
    w.write_header(&record.header)?;
    let mut events = record.events.iter().peekable();
    for row in &record.rows {
        while let Some(e) = events.next_if(|e| e.t_ms <= row.t_ms) {
            w.write_event(e)?;
        }
        w.write_row(row)?;
    }
    for e in events {
        w.write_event(e)?;
    }
    w.flush()
}

pub fn export_csv(record: &SessionRecord, path: impl AsRef<Path>) -> Result<(), RecordError> {
    let path = path.as_ref();
    let io_err = |source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_csv(record, BufWriter::with_capacity(1 << 20, file)).map_err(io_err)
}

pub fn import_csv(path: impl AsRef<Path>) -> Result<SessionRecord, RecordError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text)
}

fn parse_event(line: &str, lineno: usize) -> Result<Event, RecordError> {
    let err = |msg: String| RecordError::Parse { line: lineno, msg };
    let rest = line
        .strip_prefix("#EVENT ")
        .ok_or_else(|| err("malformed event line".into()))?;
    let mut parts = rest.splitn(3, ' ');
    let t = parts.next().unwrap_or_default();
    let kind = parts.next().ok_or_else(|| err("event is missing its type".into()))?;
    let payload = parts.next().unwrap_or("{}");
    let t_ms = t
        .parse::<u64>()
        .map_err(|_| err(format!("event time {t:?} is not an integer")))?;
    let kind = kind.parse::<EventKind>().map_err(err)?;
    let payload = serde_json::from_str(payload).map_err(|e| err(format!("event payload: {e}")))?;
    Ok(Event { t_ms, kind, payload })
}

fn parse_field<T: FromStr>(s: &str, col: &str, row: usize, line: usize) -> Result<T, RecordError> {
    s.parse::<T>().map_err(|_| RecordError::Row {
        row,
        line,
        msg: format!("{col}: {s:?} is not a valid number"),
    })
}

#[derive(Default)]
struct Preamble {
    format_version: Option<u32>,
    seed: Option<u64>,
    source: Option<String>,
    window: Option<usize>,
    decimation: Option<u32>,
    profile: Option<Option<CalibrationProfile>>,
    config: Option<ControlConfig>,
    plant: Option<PlantParams>,
    calibration: Option<CalibrationSettings>,
}

impl Preamble {
    fn set(&mut self, key: &str, value: &str, lineno: usize) -> Result<(), RecordError> {
        let err = |msg: String| RecordError::Parse { line: lineno, msg };
        fn j<T: serde::de::DeserializeOwned>(key: &str, v: &str) -> Result<T, String> {
            serde_json::from_str(v).map_err(|e| format!("{key}: {e}"))
        }
        match key {
            "format_version" => {
                let v = value
                    .parse::<u32>()
                    .map_err(|_| err(format!("format_version {value:?} is not an integer")))?;
                if v != FORMAT_VERSION {
                    return Err(RecordError::UnsupportedVersion {
                        found: v,
                        supported: FORMAT_VERSION,
                    });
                }
                self.format_version = Some(v);
            }
            "seed" => self.seed = Some(value.parse().map_err(|_| err(format!("seed {value:?}")))?),
            "source" => self.source = Some(value.to_string()),
            "window" => self.window = Some(value.parse().map_err(|_| err(format!("window {value:?}")))?),
            "decimation" => {
                self.decimation = Some(value.parse().map_err(|_| err(format!("decimation {value:?}")))?)
            }
            "profile" => {
                self.profile = Some(if value == "none" {
                    None
                } else {
                    Some(j(key, value).map_err(err)?)
                })
            }
            "config" => self.config = Some(j(key, value).map_err(err)?),
            "plant" => self.plant = Some(j(key, value).map_err(err)?),
            "calibration" => self.calibration = Some(j(key, value).map_err(err)?),
            // unknown keys are tolerated for forward-compatible annotations
            _ => {}
        }
        Ok(())
    }

    fn finish(self) -> Result<SessionHeader, RecordError> {
        fn req<T>(v: Option<T>, key: &str) -> Result<T, RecordError> {
            v.ok_or_else(|| RecordError::Schema(format!("preamble is missing {key}")))
        }
        Ok(SessionHeader {
            format_version: req(self.format_version, "format_version")?,
            seed: req(self.seed, "seed")?,
            source: req(self.source, "source")?,
            window: req(self.window, "window")?,
            decimation: req(self.decimation, "decimation")?,
            profile: req(self.profile, "profile")?,
            config: req(self.config, "config")?,
            plant: req(self.plant, "plant")?,
            calibration: req(self.calibration, "calibration")?,
        })
    }
}

fn check_header_row(line: &str, required: &[&str]) -> Result<Vec<String>, RecordError> {
    let cols: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
    let missing: Vec<&str> = required
        .iter()
        .filter(|c| !cols.iter().any(|h| h == *c))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(RecordError::Schema(format!(
            "missing column(s): {}",
            missing.join(", ")
        )));
    }
    Ok(cols)
}

/// Parses a complete session file.
pub fn parse_csv(text: &str) -> Result<SessionRecord, RecordError> {
    let mut pre = Preamble::default();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut pending_events = Vec::new();

    // preamble up to the column header
    let mut header_seen = false;
    for (lineno, line) in lines.by_ref() {
        if line.starts_with("#EVENT") {
            pending_events.push(parse_event(line, lineno)?);
        } else if let Some(kv) = line.strip_prefix('#') {
            let kv = kv.trim();
            if let Some((k, v)) = kv.split_once('=') {
                pre.set(k.trim(), v.trim(), lineno)?;
            }
        } else if line.trim().is_empty() {
            continue;
        } else {
            let cols = check_header_row(line, &COLUMNS)?;
            if cols != COLUMNS {
                return Err(RecordError::Schema(format!(
                    "expected columns {}, found {line}",
                    COLUMNS.join(",")
                )));
            }
            header_seen = true;
            break;
        }
    }
    if !header_seen {
        return Err(RecordError::Schema("missing column header row".into()));
    }
    let mut record = SessionRecord::new(pre.finish()?);
    record.events = pending_events;

    for (lineno, line) in lines {
        if line.starts_with("#EVENT") {
            record.events.push(parse_event(line, lineno)?);
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let row_idx = record.rows.len();
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != COLUMNS.len() {
            return Err(RecordError::Row {
                row: row_idx,
                line: lineno,
                msg: format!("expected {} fields, found {}", COLUMNS.len(), f.len()),
            });
        }
        let row = Row {
            t_ms: parse_field(f[0], "t_ms", row_idx, lineno)?,
            volts: parse_field(f[1], "volts", row_idx, lineno)?,
            raw: parse_field(f[2], "raw", row_idx, lineno)?,
            emg_percent: parse_field(f[3], "emg_percent", row_idx, lineno)?,
            x_percent: parse_field(f[4], "x_percent", row_idx, lineno)?,
            reference: parse_field(f[5], "reference", row_idx, lineno)?,
            position: parse_field(f[6], "position", row_idx, lineno)?,
        };
        if let Some(prev) = record.rows.last() {
            if row.t_ms != prev.t_ms + 1 {
                return Err(RecordError::Row {
                    row: row_idx,
                    line: lineno,
                    msg: format!("t_ms {} does not follow {} at 1 ms spacing", row.t_ms, prev.t_ms),
                });
            }
        }
        record.rows.push(row);
    }
    Ok(record)
}

/// Extracts the volts column. Needs only a `t_ms,volts,...` header; the
/// preamble and events are skipped.
pub fn read_volts(text: &str) -> Result<Vec<f64>, RecordError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut cols = None;
    for (lineno, line) in lines.by_ref() {
        if line.starts_with('#') || line.trim().is_empty() {
            if let Some(v) = line.strip_prefix("# format_version=") {
                let found = v.trim().parse::<u32>().map_err(|_| RecordError::Parse {
                    line: lineno,
                    msg: format!("format_version {v:?} is not an integer"),
                })?;
                if found != FORMAT_VERSION {
                    return Err(RecordError::UnsupportedVersion {
                        found,
                        supported: FORMAT_VERSION,
                    });
                }
            }
            continue;
        }
        cols = Some(check_header_row(line, &["t_ms", "volts"])?);
        break;
    }
    let Some(cols) = cols else {
        // nothing but comments: treat as an empty stream
        return Ok(Vec::new());
    };
    let t_idx = cols.iter().position(|c| c == "t_ms").expect("checked");
    let v_idx = cols.iter().position(|c| c == "volts").expect("checked");

    let mut out = Vec::new();
    let mut prev_t: Option<u64> = None;
    for (lineno, line) in lines {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(RecordError::Parse {
                line: lineno,
                msg: format!("expected {} fields, found {}", cols.len(), f.len()),
            });
        }
        let t: u64 = f[t_idx].trim().parse().map_err(|_| RecordError::Parse {
            line: lineno,
            msg: format!("t_ms: {:?} is not an integer", f[t_idx]),
        })?;
        let v: f64 = f[v_idx].trim().parse().map_err(|_| RecordError::Parse {
            line: lineno,
            msg: format!("volts: {:?} is not a number", f[v_idx]),
        })?;
        if !(0.0..=crate::pipeline::FULL_SCALE_VOLTS).contains(&v) {
            return Err(RecordError::Parse {
                line: lineno,
                msg: format!("volts: {v} outside [0, 5]"),
            });
        }
        if let Some(p) = prev_t {
            if t != p + 1 {
                return Err(RecordError::Parse {
                    line: lineno,
                    msg: format!("t_ms {t} does not follow {p} at 1 ms spacing"),
                });
            }
        }
        prev_t = Some(t);
        out.push(v);
    }
    Ok(out)
}
