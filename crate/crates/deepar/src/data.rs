//! JSON-lines panels: one object per line with `id`, `start`, `freq`,
//! `target` (numbers or `null` for missing) and `cat`.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use deepar_core::{Granularity, Panel, TimeSeries};
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    start: String,
    freq: String,
    target: Vec<Option<f64>>,
    #[serde(default)]
    cat: u32,
}

/// Accepts `YYYY-MM-DDTHH:MM:SS`, the same with a space, with fractional
/// seconds, or a bare date.
pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%dT%H:%M"];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(text, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

pub fn parse_panel<R: Read>(reader: R, path: &Path) -> Result<Panel> {
    let mut series = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let start = parse_timestamp(&rec.start).ok_or_else(|| parse_err(format!("bad start timestamp `{}`", rec.start)))?;
        let granularity = Granularity::from_code(&rec.freq)
            .ok_or_else(|| parse_err(format!("unknown freq `{}` (expected H, D, W or M)", rec.freq)))?;
        let s = TimeSeries {
            id: rec.id,
            start,
            granularity,
            target: rec.target,
            category: rec.cat,
        };
        s.validate().map_err(|e| parse_err(e.to_string()))?;
        series.push(s);
    }
    Ok(Panel::new(series)?)
}

pub fn load_panel(path: &Path) -> Result<Panel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_panel(f, path)
}
