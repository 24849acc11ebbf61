//! Readers and writers for pack telemetry CSV and the semicolon-separated
//! household power-consumption format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};
use crate::series::{month_key, DailySeries, Frequency, RawTelemetry};

pub const TELEMETRY_HEADER: [&str; 5] = ["timestamp", "voltage", "current", "soc", "ambient_temp"];
pub const HOUSEHOLD_CHANNEL: &str = "global_active_power";

/// Parses an ISO-8601 timestamp. Offsets are honoured; naive timestamps are UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp());
        }
    }
    None
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .expect("timestamp in range")
        .format("%Y-%m-%dT%H:%M:%SZ")
        .to_string()
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads `timestamp,voltage,current,soc,ambient_temp` rows. The output is
/// sorted with duplicate timestamps collapsed to their last row; values are
/// not range-checked here.
pub fn read_telemetry<R: Read>(reader: R) -> Result<RawTelemetry> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != TELEMETRY_HEADER {
        if header.is_empty() || header.iter().all(str::is_empty) {
            return Err(Error::EmptyInput);
        }
        return Err(parse_err(1, format!("expected header {}", TELEMETRY_HEADER.join(","))));
    }
    let mut raw = RawTelemetry::default();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != 5 {
            return Err(parse_err(line, format!("expected 5 fields, found {}", rec.len())));
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| parse_err(line, format!("bad timestamp {:?}", &rec[0])))?;
        let mut v = [0.0; 4];
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = rec[j + 1]
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad {} value {:?}", TELEMETRY_HEADER[j + 1], &rec[j + 1])))?;
        }
        raw.push(ts, v[0], v[1], v[2], v[3]);
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(raw.sorted_dedup())
}

pub fn ingest_telemetry(path: impl AsRef<Path>) -> Result<RawTelemetry> {
    read_telemetry(BufReader::new(File::open(path)?))
}

pub fn write_telemetry<W: Write>(raw: &RawTelemetry, writer: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "{}", TELEMETRY_HEADER.join(","))?;
    for i in 0..raw.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            format_timestamp(raw.timestamps[i]),
            raw.voltage[i],
            raw.current[i],
            raw.soc[i],
            raw.ambient_temp[i]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the minute-resolution household format (`Date;Time;Global_active_power;...`,
/// `d/m/yyyy` dates, `?` for missing) and returns monthly means of the
/// global active power. Missing readings are skipped; months without any
/// reading are `NaN`.
pub fn read_household<R: Read>(reader: R) -> Result<DailySeries> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(Error::EmptyInput),
    };
    let cols: Vec<&str> = header.trim().split(';').collect();
    let date_col = cols.iter().position(|c| c.eq_ignore_ascii_case("date"));
    let power_col = cols.iter().position(|c| c.eq_ignore_ascii_case("global_active_power"));
    let (Some(date_col), Some(power_col)) = (date_col, power_col) else {
        return Err(parse_err(1, "header must name Date and Global_active_power"));
    };
    let mut months: BTreeMap<(i32, u32), (f64, usize)> = BTreeMap::new();
    let mut rows = 0;
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(';').collect();
        if fields.len() != cols.len() {
            return Err(parse_err(line_no, format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        let date = NaiveDate::parse_from_str(fields[date_col], "%d/%m/%Y")
            .map_err(|_| parse_err(line_no, format!("bad date {:?}", fields[date_col])))?;
        rows += 1;
        let entry = months.entry(month_key(date)).or_insert((0.0, 0));
        let cell = fields[power_col].trim();
        if cell == "?" || cell.is_empty() {
            continue;
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad power value {cell:?}")))?;
        entry.0 += v;
        entry.1 += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyInput);
    }
    let (&(y0, m0), _) = months.first_key_value().expect("non-empty");
    let (&(y1, m1), _) = months.last_key_value().expect("non-empty");
    let len = ((y1 - y0) * 12 + m1 as i32 - m0 as i32 + 1) as usize;
    let start = NaiveDate::from_ymd_opt(y0, m0, 1).expect("valid month");
    let mut series = DailySeries::with_frequency(start, len, Frequency::Monthly);
    let values = series
        .dates()
        .iter()
        .map(|d| match months.get(&month_key(*d)) {
            Some(&(sum, n)) if n > 0 => sum / n as f64,
            _ => f64::NAN,
        })
        .collect();
    series.insert_channel(HOUSEHOLD_CHANNEL, values)?;
    series.target = Some(HOUSEHOLD_CHANNEL.to_string());
    Ok(series)
}

pub fn ingest_household(path: impl AsRef<Path>) -> Result<DailySeries> {
    read_household(File::open(path)?)
}
