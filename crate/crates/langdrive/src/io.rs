//! File formats: track CSV, state-log CSV and JSON-lines helpers.

use std::io::{BufRead, Write};
use std::path::Path;

use langdrive_core::track::TrackError;
use langdrive_core::vehicle::LogEntry;
use langdrive_core::TrackSpec;
use serde::{de::DeserializeOwned, Serialize};

pub const TRACK_HEADER: [&str; 4] = ["x_m", "y_m", "w_tr_left_m", "w_tr_right_m"];

/// The bundled elliptic oval.
pub const OVAL_CSV: &str = include_str!("../data/oval.csv");

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("header must be {expected}, found {found}")]
    Header { expected: String, found: String },
    #[error(transparent)]
    Track(#[from] TrackError),
}

pub fn bundled_oval() -> TrackSpec {
    parse_track_csv(OVAL_CSV, true).expect("bundled track parses")
}

pub fn load_track(path: &Path, closed: bool) -> Result<TrackSpec, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    parse_track_csv(&text, closed)
}

/// Parses the track CSV. Rows are numbered from 1, counting data rows only.
pub fn parse_track_csv(text: &str, closed: bool) -> Result<TrackSpec, LoadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| LoadError::Row { row: 0, reason: e.to_string() })?.clone();
    if header.iter().collect::<Vec<_>>() != TRACK_HEADER {
        return Err(LoadError::Header {
            expected: TRACK_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let (mut pts, mut wl, mut wr) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| LoadError::Row { row, reason: e.to_string() })?;
        if rec.len() != 4 {
            return Err(LoadError::Row { row, reason: format!("expected 4 fields, found {}", rec.len()) });
        }
        let mut v = [0.0; 4];
        for (j, field) in rec.iter().enumerate() {
            v[j] = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| LoadError::Row { row, reason: format!("{} is not a finite number: {field:?}", TRACK_HEADER[j]) })?;
        }
        if v[2] <= 0.0 || v[3] <= 0.0 {
            return Err(LoadError::Row { row, reason: format!("widths must be positive (left {}, right {})", v[2], v[3]) });
        }
        pts.push([v[0], v[1]]);
        wl.push(v[2]);
        wr.push(v[3]);
    }
    if pts.len() < 3 {
        return Err(LoadError::Row { row: pts.len(), reason: format!("need at least 3 points, found {}", pts.len()) });
    }
    Ok(TrackSpec::new(pts, wl, wr, closed)?)
}

pub fn write_track_csv(track: &TrackSpec, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACK_HEADER)?;
    for (i, p) in track.points().iter().enumerate() {
        w.write_record([p[0], p[1], track.widths_left()[i], track.widths_right()[i]].map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub const STATE_LOG_HEADER: [&str; 9] = ["t", "s", "n", "dphi", "delta", "v", "dleft", "dright", "crashed"];

pub fn write_state_log<'a>(rows: impl IntoIterator<Item = &'a LogEntry>, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STATE_LOG_HEADER)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.s.to_string(),
            r.n.to_string(),
            r.dphi.to_string(),
            r.delta.to_string(),
            r.v.to_string(),
            r.dleft.to_string(),
            r.dright.to_string(),
            r.crashed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(items: &[T], mut out: impl Write) -> std::io::Result<()> {
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: DeserializeOwned>(input: impl BufRead) -> anyhow::Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| anyhow::anyhow!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
