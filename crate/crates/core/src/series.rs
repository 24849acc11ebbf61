//! Timeseries containers shared by the rest of the crate.
//!
//! [`RawTelemetry`] holds minute-level pack samples; [`DailySeries`] holds the
//! regularized multichannel series every model works on. Missing values in a
//! [`DailySeries`] are stored as `NaN` until imputed.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Columns of [`RawTelemetry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawChannel {
    Voltage,
    Current,
    Soc,
    AmbientTemp,
}

impl RawChannel {
    pub const ALL: [RawChannel; 4] = [
        RawChannel::Voltage,
        RawChannel::Current,
        RawChannel::Soc,
        RawChannel::AmbientTemp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RawChannel::Voltage => "voltage",
            RawChannel::Current => "current",
            RawChannel::Soc => "soc",
            RawChannel::AmbientTemp => "ambient_temp",
        }
    }
}

/// Minute-resolution pack telemetry as parallel columns.
///
/// Timestamps are seconds since the Unix epoch; current is signed with
/// charging positive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawTelemetry {
    pub timestamps: Vec<i64>,
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    pub soc: Vec<f64>,
    pub ambient_temp: Vec<f64>,
}

impl RawTelemetry {
    pub fn new(
        timestamps: Vec<i64>,
        voltage: Vec<f64>,
        current: Vec<f64>,
        soc: Vec<f64>,
        ambient_temp: Vec<f64>,
    ) -> Result<Self> {
        let n = timestamps.len();
        for len in [voltage.len(), current.len(), soc.len(), ambient_temp.len()] {
            if len != n {
                return Err(Error::Shape {
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(Self {
            timestamps,
            voltage,
            current,
            soc,
            ambient_temp,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn column(&self, channel: RawChannel) -> &[f64] {
        match channel {
            RawChannel::Voltage => &self.voltage,
            RawChannel::Current => &self.current,
            RawChannel::Soc => &self.soc,
            RawChannel::AmbientTemp => &self.ambient_temp,
        }
    }

    pub fn push(&mut self, ts: i64, voltage: f64, current: f64, soc: f64, ambient_temp: f64) {
        self.timestamps.push(ts);
        self.voltage.push(voltage);
        self.current.push(current);
        self.soc.push(soc);
        self.ambient_temp.push(ambient_temp);
    }

    /// Keeps only the rows selected by `keep`, preserving order.
    pub fn retain_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mut out = RawTelemetry::default();
        for i in 0..self.len() {
            if keep(i) {
                out.push(
                    self.timestamps[i],
                    self.voltage[i],
                    self.current[i],
                    self.soc[i],
                    self.ambient_temp[i],
                );
            }
        }
        out
    }

    /// Stable sort by timestamp, then drop duplicate timestamps keeping the
    /// last sample of each run.
    pub fn sorted_dedup(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.timestamps[i]);
        let mut out = RawTelemetry::default();
        for (k, &i) in order.iter().enumerate() {
            let next_same = order
                .get(k + 1)
                .is_some_and(|&j| self.timestamps[j] == self.timestamps[i]);
            if !next_same {
                out.push(
                    self.timestamps[i],
                    self.voltage[i],
                    self.current[i],
                    self.soc[i],
                    self.ambient_temp[i],
                );
            }
        }
        out
    }

    /// Rejects decreasing timestamps, then collapses duplicates (keep last).
    fn monotone_dedup(&self) -> Result<Self> {
        if let Some(pos) = self.timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::UnsortedInput { index: pos + 1 });
        }
        Ok(self.sorted_dedup())
    }
}

/// UTC calendar day of a Unix timestamp.
pub fn day_of(ts: i64) -> NaiveDate {
    DateTime::from_timestamp(ts.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY, 0)
        .expect("timestamp within chrono range")
        .date_naive()
}

/// Unix timestamp of midnight UTC on `date`.
pub fn midnight(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    Mean,
    Sum,
    Last,
    Min,
    Max,
}

impl Reducer {
    /// Reduces the finite values of `values`; `NaN` when none are finite.
    pub fn reduce(self, values: &[f64]) -> f64 {
        let mut it = values.iter().copied().filter(|v| v.is_finite()).peekable();
        if it.peek().is_none() {
            return f64::NAN;
        }
        match self {
            Reducer::Mean => {
                let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                sum / n as f64
            }
            Reducer::Sum => it.sum(),
            Reducer::Last => it.last().unwrap_or(f64::NAN),
            Reducer::Min => it.fold(f64::INFINITY, f64::min),
            Reducer::Max => it.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Per-channel reducers used by [`aggregate_daily`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducerSpec {
    pub entries: Vec<(RawChannel, Reducer)>,
}

impl Default for ReducerSpec {
    /// Mean for every instantaneous signal.
    fn default() -> Self {
        Self {
            entries: RawChannel::ALL.iter().map(|&c| (c, Reducer::Mean)).collect(),
        }
    }
}

/// Step between consecutive rows of a [`DailySeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    #[default]
    Daily,
    Monthly,
}

impl Frequency {
    pub fn step(self, date: NaiveDate, k: usize) -> NaiveDate {
        match self {
            Frequency::Daily => date + chrono::Duration::days(k as i64),
            Frequency::Monthly => date
                .checked_add_months(Months::new(k as u32))
                .expect("date within range"),
        }
    }
}

/// A regular, gap-free multichannel series. One value per channel per date;
/// `NaN` marks a value still awaiting imputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub frequency: Frequency,
    dates: Vec<NaiveDate>,
    channels: BTreeMap<String, Vec<f64>>,
    pub target: Option<String>,
}

impl DailySeries {
    /// Empty-channel series of `len` consecutive days starting at `start`.
    pub fn new(start: NaiveDate, len: usize) -> Self {
        Self::with_frequency(start, len, Frequency::Daily)
    }

    pub fn with_frequency(start: NaiveDate, len: usize, frequency: Frequency) -> Self {
        let dates = (0..len).map(|k| frequency.step(start, k)).collect();
        Self {
            frequency,
            dates,
            channels: BTreeMap::new(),
            target: None,
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn start(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channels.contains_key(name)
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::NoSuchChannel(name.to_string()))
    }

    pub fn channel_mut(&mut self, name: &str) -> Result<&mut Vec<f64>> {
        self.channels
            .get_mut(name)
            .ok_or_else(|| Error::NoSuchChannel(name.to_string()))
    }

    /// Inserts or replaces a channel. Its length must match the date axis.
    pub fn insert_channel(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                got: values.len(),
            });
        }
        self.channels.insert(name.into(), values);
        Ok(())
    }

    pub fn with_channel(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.insert_channel(name, values)?;
        Ok(self)
    }

    pub fn remove_channel(&mut self, name: &str) -> Option<Vec<f64>> {
        self.channels.remove(name)
    }

    pub fn missing_count(&self, name: &str) -> Result<usize> {
        Ok(self.channel(name)?.iter().filter(|v| v.is_nan()).count())
    }

    /// True when no channel has a missing value.
    pub fn is_complete(&self) -> bool {
        self.channels.values().all(|v| v.iter().all(|x| !x.is_nan()))
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Writes `date,<channel>...` CSV. Missing values become empty cells and
    /// floats use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let names: Vec<&String> = self.channels.keys().collect();
        let mut header = vec!["date".to_string()];
        header.extend(names.iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(csv_io)?;
        for (i, date) in self.dates.iter().enumerate() {
            let mut rec = vec![date.format("%Y-%m-%d").to_string()];
            for name in &names {
                let v = self.channels[*name][i];
                rec.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`DailySeries::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        if header.get(0) != Some("date") {
            return Err(Error::Parse {
                line: 1,
                message: "first column must be `date`".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or(""), "%Y-%m-%d").map_err(
                |e| Error::Parse {
                    line,
                    message: format!("bad date: {e}"),
                },
            )?;
            dates.push(date);
            for (c, col) in cols.iter_mut().enumerate() {
                let cell = rec.get(c + 1).unwrap_or("").trim();
                let v = if cell.is_empty() {
                    f64::NAN
                } else {
                    cell.parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        message: format!("column {}: {e}", names[c]),
                    })?
                };
                col.push(v);
            }
        }
        let start = *dates.first().ok_or(Error::EmptyInput)?;
        let frequency = match dates.get(1) {
            Some(&d) if d == Frequency::Monthly.step(start, 1) && d != start.succ_opt().unwrap() => {
                Frequency::Monthly
            }
            _ => Frequency::Daily,
        };
        let mut series = DailySeries::with_frequency(start, dates.len(), frequency);
        if series.dates != dates {
            return Err(Error::Parse {
                line: 2,
                message: "dates are not a contiguous range".into(),
            });
        }
        for (name, col) in names.into_iter().zip(cols) {
            series.insert_channel(name, col)?;
        }
        Ok(series)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Quartiles and Tukey fences of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
}

impl SeriesStats {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower_fence && v <= self.upper_fence
    }
}

/// Linear-interpolation quantile between order statistics of sorted data
/// (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quartiles and 1.5 x IQR fences of the finite entries of `values`.
pub fn quartile_stats(values: &[f64]) -> Result<SeriesStats> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: sorted.len(),
        });
    }
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    Ok(SeriesStats {
        q1,
        q3,
        iqr,
        lower_fence: q1 - 1.5 * iqr,
        upper_fence: q3 + 1.5 * iqr,
    })
}

/// Buckets `(timestamp, value)` pairs into UTC days from `start` for `len`
/// days and reduces each bucket. Empty buckets yield `NaN`.
pub fn reduce_by_day(
    start: NaiveDate,
    len: usize,
    timestamps: &[i64],
    values: &[f64],
    reducer: Reducer,
) -> Vec<f64> {
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); len];
    let origin = midnight(start);
    for (&ts, &v) in timestamps.iter().zip(values) {
        let day = (ts - origin).div_euclid(SECONDS_PER_DAY);
        if day >= 0 && (day as usize) < len {
            buckets[day as usize].push(v);
        }
    }
    buckets.iter().map(|b| reducer.reduce(b)).collect()
}

/// Aggregates telemetry into one row per UTC calendar day between the first
/// and last sample. Days without samples are left missing.
pub fn aggregate_daily(raw: &RawTelemetry, reducers: &ReducerSpec) -> Result<DailySeries> {
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    let raw = raw.monotone_dedup()?;
    let first = day_of(raw.timestamps[0]);
    let last = day_of(*raw.timestamps.last().unwrap());
    let len = (last - first).num_days() as usize + 1;
    let mut series = DailySeries::new(first, len);
    for &(channel, reducer) in &reducers.entries {
        let values = reduce_by_day(first, len, &raw.timestamps, raw.column(channel), reducer);
        series.insert_channel(channel.name(), values)?;
    }
    Ok(series)
}

/// Day index of `date` relative to `start` (negative before `start`).
pub fn days_between(start: NaiveDate, date: NaiveDate) -> i64 {
    (date - start).num_days()
}

/// Month index used for monthly bucketing.
pub fn month_key(date: NaiveDate) -> (i32, u32) {
    (date.year(), date.month())
}
