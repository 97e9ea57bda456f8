//! The hourly record CSV: `timestamp,load_mw,temp_actual_c,temp_forecast_c,is_holiday`.

use std::path::Path;

use chrono::NaiveDateTime;
use lfednet_core::data::{fill_gaps, HourlyRecord};

use crate::error::{Error, Result};
use crate::fsio;

pub const HEADER: [&str; 5] = ["timestamp", "load_mw", "temp_actual_c", "temp_forecast_c", "is_holiday"];

const TIMESTAMP_FORMATS: [&str; 3] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Parse records from CSV text. Errors carry the 1-based line number.
pub fn parse(text: &[u8], path: &Path) -> Result<Vec<HourlyRecord>> {
    let fail = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text);
    let header = rdr.headers().map_err(|e| fail(1, e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(fail(1, format!("expected header `{}`", HEADER.join(","))));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fail(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let number = |i: usize| {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(line, format!("{}: not a finite number: `{}`", HEADER[i], field(i))))
        };
        out.push(HourlyRecord {
            timestamp: parse_timestamp(field(0))
                .ok_or_else(|| fail(line, format!("timestamp: cannot parse `{}`", field(0))))?,
            load: number(1)?,
            temp_actual: number(2)?,
            temp_forecast: number(3)?,
            is_holiday: parse_flag(field(4))
                .ok_or_else(|| fail(line, format!("is_holiday: expected 0 or 1, found `{}`", field(4))))?,
        });
    }
    Ok(out)
}

/// Read, check spacing and fill short gaps.
pub fn load_csv(path: &Path) -> Result<Vec<HourlyRecord>> {
    let raw = parse(&fsio::read(path)?, path)?;
    fill_gaps(&raw).map_err(|source| Error::Records {
        path: path.to_path_buf(),
        source,
    })
}

pub fn to_csv(records: &[HourlyRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.timestamp.format(TIMESTAMP_FORMATS[0]).to_string(),
            r.load.to_string(),
            r.temp_actual.to_string(),
            r.temp_forecast.to_string(),
            u8::from(r.is_holiday).to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
