//! Supervised reframing of a daily series and chronological splitting.
//!
//! A frame row holds predictor channels over the `past` steps `[t - P, t)`
//! and targets over `[t, t + H)`. Predictor columns are channel-major,
//! lag-minor: `a(t-2), a(t-1), b(t-2), b(t-1)`. Optional contemporaneous
//! channels (values already known at `t`, such as out-of-sample component
//! forecasts) follow as `name(t)` columns.

use std::io::Write;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::series::{DailySeries, Frequency};

/// Signals shared by every predictor set.
pub const BASE_CHANNELS: [&str; 9] = [
    "day_index",
    "voltage",
    "current",
    "soc",
    "ambient_temp",
    "charge_minutes",
    "charge_energy",
    "delta_v",
    "cycles",
];
pub const SOH_CHANNEL: &str = "soh";
pub const INST_FREQ_CHANNEL: &str = "soh_ifreq_lag1";

/// Predictor families: component models, the basic SoH model, and the
/// SoH model augmented with component forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PredictorSet {
    #[serde(rename = "imfs")]
    Imfs,
    #[default]
    #[serde(rename = "basic")]
    Basic,
    #[serde(rename = "basic+imfs")]
    BasicImfs,
}

impl PredictorSet {
    pub fn label(self) -> &'static str {
        match self {
            PredictorSet::Imfs => "imfs",
            PredictorSet::Basic => "basic",
            PredictorSet::BasicImfs => "basic+imfs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "imfs" => Ok(PredictorSet::Imfs),
            "basic" => Ok(PredictorSet::Basic),
            "basic+imfs" => Ok(PredictorSet::BasicImfs),
            other => Err(Error::InvalidSpec(format!("unknown predictor set {other}"))),
        }
    }

    /// Frame layout for `target`. Component models use the base signals plus
    /// the lagged component; SoH models add the lagged SoH and its lagged
    /// instantaneous frequency, and `basic+imfs` appends the
    /// `imf_k_pred`/`residue_pred` forecasts at the target step.
    pub fn frame_spec(self, target: &str, n_imfs: usize, past: usize, horizon: usize) -> FrameSpec {
        self.frame_spec_with(&BASE_CHANNELS, target, n_imfs, past, horizon)
    }

    /// As [`frame_spec`](Self::frame_spec) with a custom base channel list.
    pub fn frame_spec_with(
        self,
        base: &[&str],
        target: &str,
        n_imfs: usize,
        past: usize,
        horizon: usize,
    ) -> FrameSpec {
        let mut lagged: Vec<String> = base.iter().map(|s| s.to_string()).collect();
        let mut now = Vec::new();
        match self {
            PredictorSet::Imfs => lagged.push(target.to_string()),
            PredictorSet::Basic | PredictorSet::BasicImfs => {
                lagged.push(INST_FREQ_CHANNEL.to_string());
                lagged.push(SOH_CHANNEL.to_string());
                if self == PredictorSet::BasicImfs {
                    now.extend((1..=n_imfs).map(|k| format!("imf_{k}_pred")));
                    now.push("residue_pred".to_string());
                }
            }
        }
        FrameSpec {
            predictors: lagged,
            contemporaneous: now,
            target: target.to_string(),
            past,
            horizon,
            predictor_set: self,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    /// Channels sampled over the past window.
    pub predictors: Vec<String>,
    /// Channels sampled at the first target step.
    pub contemporaneous: Vec<String>,
    pub target: String,
    pub past: usize,
    pub horizon: usize,
    pub predictor_set: PredictorSet,
}

impl FrameSpec {
    pub fn new(predictors: &[&str], target: &str, past: usize, horizon: usize) -> Self {
        Self {
            predictors: predictors.iter().map(|s| s.to_string()).collect(),
            contemporaneous: Vec::new(),
            target: target.to_string(),
            past,
            horizon,
            predictor_set: PredictorSet::Basic,
        }
    }

    pub fn window(&self) -> usize {
        self.past + self.horizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedFrame {
    pub x: Matrix,
    /// `rows x horizon` targets.
    pub y: Matrix,
    pub feature_names: Vec<String>,
    pub target: String,
    pub past: usize,
    pub horizon: usize,
    /// Date of each row's first target step.
    pub origin_dates: Vec<NaiveDate>,
    /// Target value one step before the first target step.
    pub last_observed: Vec<f64>,
    pub predictor_set: PredictorSet,
    pub frequency: Frequency,
}

pub fn lag_name(channel: &str, lag: usize) -> String {
    format!("{channel}(t-{lag})")
}

pub fn make_frame(series: &DailySeries, spec: &FrameSpec) -> Result<SupervisedFrame> {
    let (p, h) = (spec.past, spec.horizon);
    if p == 0 || h == 0 {
        return Err(Error::InvalidSpec("past and horizon must be at least 1".into()));
    }
    if spec.contemporaneous.iter().any(|c| c == &spec.target) {
        return Err(Error::Leakage(format!(
            "target {} is listed as an unlagged predictor",
            spec.target
        )));
    }
    let n = series.len();
    if n < p + h {
        return Err(Error::InsufficientData { needed: p + h, got: n });
    }
    let complete = |name: &str| -> Result<&[f64]> {
        let values = series.channel(name)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec(format!("channel {name} has missing values")));
        }
        Ok(values)
    };
    let lagged: Vec<&[f64]> = spec.predictors.iter().map(|c| complete(c)).collect::<Result<_>>()?;
    let now: Vec<&[f64]> = spec.contemporaneous.iter().map(|c| complete(c)).collect::<Result<_>>()?;
    let target = complete(&spec.target)?;

    let mut feature_names = Vec::with_capacity(lagged.len() * p + now.len());
    for name in &spec.predictors {
        feature_names.extend((1..=p).rev().map(|lag| lag_name(name, lag)));
    }
    feature_names.extend(spec.contemporaneous.iter().map(|c| format!("{c}(t)")));

    let rows = n - p - h + 1;
    let width = feature_names.len();
    let mut x = Vec::with_capacity(rows * width);
    let mut y = Vec::with_capacity(rows * h);
    let mut origin_dates = Vec::with_capacity(rows);
    let mut last_observed = Vec::with_capacity(rows);
    for r in 0..rows {
        let t = r + p;
        for col in &lagged {
            x.extend_from_slice(&col[r..t]);
        }
        x.extend(now.iter().map(|col| col[t]));
        y.extend_from_slice(&target[t..t + h]);
        origin_dates.push(series.dates()[t]);
        last_observed.push(target[t - 1]);
    }
    Ok(SupervisedFrame {
        x: Matrix::new(rows, width, x)?,
        y: Matrix::new(rows, h, y)?,
        feature_names,
        target: spec.target.clone(),
        past: p,
        horizon: h,
        origin_dates,
        last_observed,
        predictor_set: spec.predictor_set,
        frequency: series.frequency,
    })
}

impl SupervisedFrame {
    pub fn n_rows(&self) -> usize {
        self.x.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    pub fn window(&self) -> usize {
        self.past + self.horizon
    }

    /// Targets of horizon step `step` for every row.
    pub fn target_column(&self, step: usize) -> Vec<f64> {
        self.y.column(step)
    }

    pub fn take(&self, rows: &[usize]) -> SupervisedFrame {
        SupervisedFrame {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            feature_names: self.feature_names.clone(),
            target: self.target.clone(),
            past: self.past,
            horizon: self.horizon,
            origin_dates: rows.iter().map(|&i| self.origin_dates[i]).collect(),
            last_observed: rows.iter().map(|&i| self.last_observed[i]).collect(),
            predictor_set: self.predictor_set,
            frequency: self.frequency,
        }
    }

    /// Date of horizon step `step` for row `row`.
    pub fn target_date(&self, row: usize, step: usize) -> NaiveDate {
        self.frequency.step(self.origin_dates[row], step)
    }

    pub fn slice(&self, range: Range<usize>) -> SupervisedFrame {
        self.take(&range.collect::<Vec<_>>())
    }

    pub fn target_names(&self) -> Vec<String> {
        (0..self.horizon)
            .map(|k| if k == 0 { format!("{}(t)", self.target) } else { format!("{}(t+{k})", self.target) })
            .collect()
    }

    /// `date,<features>,<targets>` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.extend(self.target_names());
        w.write_record(&header).map_err(std::io::Error::other)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.origin_dates[i].format("%Y-%m-%d").to_string()];
            rec.extend(self.x.row(i).iter().map(f64::to_string));
            rec.extend(self.y.row(i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(std::io::Error::other)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub folds: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            folds: 10,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidSpec("train_fraction must lie in (0, 1)".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidSpec("at least two folds are required".into()));
        }
        Ok(())
    }

    /// Number of leading rows that go to training.
    pub fn train_rows(&self, rows: usize) -> usize {
        (self.train_fraction * rows as f64).floor() as usize
    }
}

/// Chronological prefix/suffix split with `floor(fraction * rows)` train rows.
pub fn train_test_split(frame: &SupervisedFrame, spec: &SplitSpec) -> Result<(SupervisedFrame, SupervisedFrame)> {
    spec.validate()?;
    if frame.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cut = spec.train_rows(frame.n_rows());
    Ok((frame.slice(0..cut), frame.slice(cut..frame.n_rows())))
}

/// Expanding-window folds over `rows` rows. The rows form `folds + 1`
/// contiguous blocks (validation blocks share one size; the first block takes
/// the remainder); fold `k` trains on every block before block `k + 1` and
/// validates on it.
pub fn ts_cv_folds(rows: usize, folds: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 1 || rows < folds + 1 {
        return Err(Error::InsufficientData {
            needed: folds + 1,
            got: rows,
        });
    }
    let block = rows / (folds + 1);
    let first = rows - folds * block;
    Ok((0..folds)
        .map(|k| {
            let train_end = first + k * block;
            ((0..train_end).collect(), (train_end..train_end + block).collect())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(len: usize) -> DailySeries {
        let a: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..len).map(|i| 100.0 + i as f64).collect();
        DailySeries::new(NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(), len)
            .with_channel("a", a)
            .unwrap()
            .with_channel("b", b)
            .unwrap()
    }

    #[test]
    fn row_counts() {
        let f = make_frame(&series(10), &FrameSpec::new(&["a"], "a", 6, 1)).unwrap();
        assert_eq!(f.n_rows(), 4);
        let f = make_frame(&series(7), &FrameSpec::new(&["a"], "a", 6, 1)).unwrap();
        assert_eq!(f.n_rows(), 1);
        assert!(matches!(
            make_frame(&series(6), &FrameSpec::new(&["a"], "a", 6, 1)),
            Err(Error::InsufficientData { needed: 7, got: 6 })
        ));
    }

    #[test]
    fn channel_major_layout() {
        let f = make_frame(&series(5), &FrameSpec::new(&["a", "b"], "a", 2, 1)).unwrap();
        // first row: t = 2
        assert_eq!(f.x.row(0), &[0.0, 1.0, 100.0, 101.0]);
        assert_eq!(f.feature_names, vec!["a(t-2)", "a(t-1)", "b(t-2)", "b(t-1)"]);
        assert_eq!(f.y.row(0), &[2.0]);
        assert_eq!(f.last_observed[0], 1.0);
        assert_eq!(f.origin_dates[0], NaiveDate::from_ymd_opt(2022, 1, 3).unwrap());
    }

    #[test]
    fn unlagged_target_is_leakage() {
        let mut spec = FrameSpec::new(&["b"], "a", 2, 1);
        spec.contemporaneous.push("a".into());
        assert!(matches!(make_frame(&series(8), &spec), Err(Error::Leakage(_))));
        spec.contemporaneous = vec!["b".into()];
        let f = make_frame(&series(8), &spec).unwrap();
        assert_eq!(f.feature_names.last().unwrap(), "b(t)");
        assert_eq!(*f.x.row(0).last().unwrap(), 102.0);
    }

    #[test]
    fn split_rounding() {
        for (rows, train) in [(100, 70), (10, 7), (101, 70)] {
            let f = make_frame(&series(rows + 1), &FrameSpec::new(&["a"], "a", 1, 1)).unwrap();
            assert_eq!(f.n_rows(), rows);
            let (tr, te) = train_test_split(&f, &SplitSpec::default()).unwrap();
            assert_eq!((tr.n_rows(), te.n_rows()), (train, rows - train));
            assert!(tr.origin_dates.last() < te.origin_dates.first());
        }
    }

    #[test]
    fn fold_enumeration() {
        let folds = ts_cv_folds(22, 10).unwrap();
        assert_eq!(folds.len(), 10);
        assert_eq!(folds[0], (vec![0, 1], vec![2, 3]));
        assert_eq!(folds[9].1, vec![20, 21]);
        let folds = ts_cv_folds(6, 2).unwrap();
        assert_eq!(folds[0], (vec![0, 1], vec![2, 3]));
        assert_eq!(folds[1], (vec![0, 1, 2, 3], vec![4, 5]));
        assert!(ts_cv_folds(10, 10).is_err());
    }

    #[test]
    fn basic_plus_imfs_columns() {
        let base = PredictorSet::Basic.frame_spec("soh", 3, 6, 1);
        let aug = PredictorSet::BasicImfs.frame_spec("soh", 3, 6, 1);
        let mut names: Vec<String> = BASE_CHANNELS.iter().map(|s| s.to_string()).collect();
        names.extend([INST_FREQ_CHANNEL.to_string(), "soh".to_string()]);
        names.extend(["imf_1_pred", "imf_2_pred", "imf_3_pred", "residue_pred"].map(String::from));
        let len = 20;
        let mut s = DailySeries::new(NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(), len);
        for n in &names {
            s.insert_channel(n.clone(), vec![1.0; len]).unwrap();
        }
        let fb = make_frame(&s, &base).unwrap();
        let fa = make_frame(&s, &aug).unwrap();
        let extra: Vec<&String> = fa.feature_names.iter().filter(|n| !fb.feature_names.contains(n)).collect();
        assert!(fb.feature_names.iter().all(|n| fa.feature_names.contains(n)));
        assert_eq!(extra, vec!["imf_1_pred(t)", "imf_2_pred(t)", "imf_3_pred(t)", "residue_pred(t)"]);
    }

    #[test]
    fn csv_header_lists_features() {
        let f = make_frame(&series(5), &FrameSpec::new(&["a", "b"], "a", 2, 2)).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("date,a(t-2),a(t-1),b(t-2),b(t-1),a(t),a(t+1)\n"));
        assert_eq!(text.lines().count(), 1 + f.n_rows());
    }

    proptest! {
        #[test]
        fn targets_reproduce_series_tail(len in 3usize..60, past in 1usize..6) {
            prop_assume!(len >= past + 1);
            let s = series(len);
            let f = make_frame(&s, &FrameSpec::new(&["b"], "a", past, 1)).unwrap();
            prop_assert_eq!(f.n_rows(), len - past);
            prop_assert_eq!(f.target_column(0), s.channel("a").unwrap()[past..].to_vec());
        }

        #[test]
        fn folds_expand_without_leakage(rows in 3usize..200, folds in 2usize..12) {
            prop_assume!(rows >= folds + 1);
            let all = ts_cv_folds(rows, folds).unwrap();
            for (k, (train, valid)) in all.iter().enumerate() {
                prop_assert!(train.iter().max() < valid.iter().min());
                if let Some((next, _)) = all.get(k + 1) {
                    prop_assert!(train.iter().all(|i| next.contains(i)));
                    prop_assert!(next.len() > train.len());
                }
            }
            prop_assert_eq!(all.last().unwrap().1.last().copied(), Some(rows - 1));
        }
    }
}
