//! Walk-forward validation with rolled evaluation windows and point-wise
//! confidence intervals, forecast metrics, the persistence baseline and the
//! Wilcoxon signed-rank test.

use std::io::{Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::reframe::SupervisedFrame;
use crate::stats::{average_ranks, mean, sample_std, variance};
use crate::trees::{fit_frame, EnsembleSpec, TargetMode};

pub const CRITICAL_VALUE: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    #[default]
    Expanding,
    Sliding,
}

/// Which predictions feed the standard error of an iteration's interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiScope {
    /// Every prediction made so far.
    #[default]
    Running,
    CurrentWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkForwardSpec {
    pub n_sample: usize,
    pub n_roll: usize,
    pub mode: WindowMode,
    pub ci_scope: CiScope,
    pub critical_value: f64,
    pub target_mode: TargetMode,
}

impl Default for WalkForwardSpec {
    fn default() -> Self {
        Self {
            n_sample: 30,
            n_roll: 1,
            mode: WindowMode::Expanding,
            ci_scope: CiScope::Running,
            critical_value: CRITICAL_VALUE,
            target_mode: TargetMode::Level,
        }
    }
}

impl WalkForwardSpec {
    pub fn new(n_sample: usize, n_roll: usize, mode: WindowMode) -> Self {
        Self {
            n_sample,
            n_roll,
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sample == 0 || self.n_roll == 0 {
            return Err(Error::InvalidSpec("n_sample and n_roll must be at least 1".into()));
        }
        if !(self.critical_value > 0.0) {
            return Err(Error::InvalidSpec("critical_value must be positive".into()));
        }
        Ok(())
    }

    /// Advisory messages for configurations outside
    /// `sample > window > 2 * roll` or with a roll above 28 % of the window.
    pub fn protocol_warnings(&self, window: usize) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.n_sample > window && window > 2 * self.n_roll) {
            out.push(format!(
                "sample {} / window {} / roll {} violates sample > window > 2 x roll",
                self.n_sample, window, self.n_roll
            ));
        }
        if self.n_roll as f64 > 0.28 * window as f64 {
            out.push(format!("roll {} exceeds 28% of window {}", self.n_roll, window));
        }
        out
    }

    /// Frame rows at which the model is evaluated.
    pub fn evaluation_rows(&self, rows: usize) -> Vec<usize> {
        let start = rows.saturating_sub(self.n_sample);
        (0..self.n_sample).step_by(self.n_roll).map(|k| start + k).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Frame row whose targets are predicted.
    pub window_index: usize,
    pub train_start: usize,
    pub train_end: usize,
    pub train_size: usize,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the truth is constant.
    pub r2: Option<f64>,
    pub evar: Option<f64>,
}

pub fn metrics(truth: &[f64], predictions: &[f64]) -> Result<MetricSet> {
    if truth.len() != predictions.len() {
        return Err(Error::Shape {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = truth.len() as f64;
    let err: Vec<f64> = truth.iter().zip(predictions).map(|(y, p)| y - p).collect();
    let mae = err.iter().map(|e| e.abs()).sum::<f64>() / n;
    let ss_res: f64 = err.iter().map(|e| e * e).sum();
    let rmse = (ss_res / n).sqrt();
    let var_y = variance(truth);
    let (r2, evar) = if var_y > 0.0 {
        (Some(1.0 - ss_res / (n * var_y)), Some(1.0 - variance(&err) / var_y))
    } else {
        (None, None)
    };
    Ok(MetricSet {
        n: truth.len(),
        mae,
        rmse,
        r2,
        evar,
    })
}

/// Half-width `1.96 * s / sqrt(n)` of the interval around a set of
/// predictions, `s` being the sample standard deviation (0 for one value).
pub fn pointwise_ci(predictions: &[f64]) -> f64 {
    pointwise_ci_with(predictions, CRITICAL_VALUE)
}

pub fn pointwise_ci_with(predictions: &[f64], critical_value: f64) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    critical_value * sample_std(predictions) / (predictions.len() as f64).sqrt()
}

/// Persistence forecast: the target's last observed value.
pub fn naive_forecast(frame: &SupervisedFrame) -> Result<Vec<f64>> {
    if frame.horizon != 1 {
        return Err(Error::InvalidSpec("persistence forecast needs horizon 1".into()));
    }
    Ok(frame.last_observed.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub spec: WalkForwardSpec,
    pub model: String,
    /// One entry per evaluated point (iteration x horizon step).
    pub dates: Vec<NaiveDate>,
    pub truth: Vec<f64>,
    pub predictions: Vec<f64>,
    pub naive: Vec<f64>,
    pub ci_half_width: Vec<f64>,
    pub iteration_log: Vec<IterationLog>,
    pub metrics: MetricSet,
    pub naive_metrics: MetricSet,
    /// True when some interval came from a single prediction.
    pub degenerate_ci: bool,
}

#[derive(Serialize)]
struct MetricsDoc<'a> {
    model: &'a str,
    n_sample: usize,
    n_roll: usize,
    mode: WindowMode,
    iterations: usize,
    degenerate_ci: bool,
    metrics: &'a MetricSet,
    naive_metrics: &'a MetricSet,
    mean_ci_half_width: f64,
}

impl BacktestReport {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "truth", "prediction", "ci_lo", "ci_hi"])
            .map_err(std::io::Error::other)?;
        for i in 0..self.len() {
            let (p, h) = (self.predictions[i], self.ci_half_width[i]);
            w.write_record([
                self.dates[i].format("%Y-%m-%d").to_string(),
                self.truth[i].to_string(),
                p.to_string(),
                (p - h).to_string(),
                (p + h).to_string(),
            ])
            .map_err(std::io::Error::other)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metrics_json(&self) -> Result<String> {
        let doc = MetricsDoc {
            model: &self.model,
            n_sample: self.spec.n_sample,
            n_roll: self.spec.n_roll,
            mode: self.spec.mode,
            iterations: self.iteration_log.len(),
            degenerate_ci: self.degenerate_ci,
            metrics: &self.metrics,
            naive_metrics: &self.naive_metrics,
            mean_ci_half_width: mean(&self.ci_half_width),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// A run CSV as written by [`BacktestReport::write_csv`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTable {
    pub dates: Vec<NaiveDate>,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
}

impl RunTable {
    pub fn ci_half_width(&self) -> Vec<f64> {
        self.ci_lo.iter().zip(&self.ci_hi).map(|(lo, hi)| 0.5 * (hi - lo)).collect()
    }
}

pub fn read_run_csv<R: Read>(reader: R) -> Result<RunTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = r.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != ["date", "truth", "prediction", "ci_lo", "ci_hi"] {
        return Err(Error::Parse {
            line: 1,
            message: "expected header date,truth,prediction,ci_lo,ci_hi".into(),
        });
    }
    let mut t = RunTable::default();
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let bad = |what: &str| Error::Parse { line, message: format!("bad {what}") };
        t.dates
            .push(NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| bad("date"))?);
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(["", "truth", "prediction", "ci_lo", "ci_hi"][i]));
        t.truth.push(num(1)?);
        t.prediction.push(num(2)?);
        t.ci_lo.push(num(3)?);
        t.ci_hi.push(num(4)?);
    }
    if t.dates.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(t)
}

/// Training rows `[start, end)` for the iteration that predicts row `e`.
/// Rows whose targets reach into the predicted window are purged.
fn train_range(spec: &WalkForwardSpec, te_start: usize, k: usize, e: usize, horizon: usize) -> (usize, usize) {
    let start = match spec.mode {
        WindowMode::Expanding => 0,
        WindowMode::Sliding => k * spec.n_roll,
    };
    let end = (te_start + k * spec.n_roll).min(e + 1 - horizon.min(e + 1));
    (start, end)
}

/// Walk-forward backtest of `model` over the newest `n_sample` rows of
/// `frame`. Iteration `k` refits on the rows before evaluation row
/// `te_start + k * n_roll` (dropping `k * n_roll` head rows in sliding mode)
/// and predicts that row's targets.
pub fn walk_forward(frame: &SupervisedFrame, model: &EnsembleSpec, spec: &WalkForwardSpec) -> Result<BacktestReport> {
    spec.validate()?;
    let rows = frame.n_rows();
    if spec.n_sample >= rows {
        return Err(Error::InsufficientTrainingData {
            rows,
            sample: spec.n_sample,
        });
    }
    let te_start = rows - spec.n_sample;
    let eval = spec.evaluation_rows(rows);
    let h = frame.horizon;
    let per_iter: Vec<(IterationLog, Vec<f64>)> = eval
        .par_iter()
        .enumerate()
        .map(|(k, &e)| {
            let (start, end) = train_range(spec, te_start, k, e, h);
            if end <= start + 1 {
                return Err(Error::InsufficientTrainingData {
                    rows,
                    sample: spec.n_sample,
                });
            }
            let train: Vec<usize> = (start..end).collect();
            let fitted = fit_frame(&frame.take(&train), model, spec.target_mode)?;
            let pred = fitted.predict(&frame.take(&[e]))?;
            let log = IterationLog {
                iteration: k,
                window_index: e,
                train_start: start,
                train_end: end,
                train_size: end - start,
                date: frame.origin_dates[e],
            };
            Ok((log, pred.row(0).to_vec()))
        })
        .collect::<Result<_>>()?;

    let mut report = BacktestReport {
        spec: spec.clone(),
        model: model.name(),
        dates: Vec::new(),
        truth: Vec::new(),
        predictions: Vec::new(),
        naive: Vec::new(),
        ci_half_width: Vec::new(),
        iteration_log: Vec::new(),
        metrics: MetricSet {
            n: 0,
            mae: 0.0,
            rmse: 0.0,
            r2: None,
            evar: None,
        },
        naive_metrics: MetricSet {
            n: 0,
            mae: 0.0,
            rmse: 0.0,
            r2: None,
            evar: None,
        },
        degenerate_ci: false,
    };
    for (log, pred) in per_iter {
        let e = log.window_index;
        let accumulated = match spec.ci_scope {
            CiScope::Running => [report.predictions.as_slice(), &pred].concat(),
            CiScope::CurrentWindow => pred.clone(),
        };
        report.degenerate_ci |= accumulated.len() == 1;
        let half = pointwise_ci_with(&accumulated, spec.critical_value);
        for (step, p) in pred.into_iter().enumerate() {
            report.dates.push(frame.target_date(e, step));
            report.truth.push(frame.y.get(e, step));
            report.predictions.push(p);
            report.naive.push(frame.last_observed[e]);
            report.ci_half_width.push(half);
        }
        report.iteration_log.push(log);
    }
    report.metrics = metrics(&report.truth, &report.predictions)?;
    report.naive_metrics = metrics(&report.truth, &report.naive)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Smaller of the positive and negative rank sums.
    pub statistic: f64,
    pub p_value: f64,
    pub same_distribution: bool,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
}

pub const WILCOXON_EXACT_MAX: usize = 25;

/// Two-sided Wilcoxon signed-rank test on paired samples.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            got: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(Error::DegenerateSample);
    }
    let n = d.len();
    if n < 6 {
        return Err(Error::InsufficientData { needed: 6, got: n });
    }
    let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);
    let exact = n <= WILCOXON_EXACT_MAX;
    let p_value = if exact {
        exact_p(&ranks, w)
    } else {
        normal_p(&ranks, w)
    };
    Ok(WilcoxonResult {
        statistic: w,
        p_value,
        same_distribution: p_value >= alpha,
        n,
        exact,
    })
}

/// `2 P(T <= w)` under random signs, by dynamic programming over doubled
/// (hence integral) ranks.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let tail: f64 = counts[..=limit.min(max)].iter().sum();
    let all = 2f64.powi(ranks.len() as i32);
    (2.0 * tail / all).min(1.0)
}

fn normal_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mu = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reframe::{make_frame, FrameSpec};
    use crate::series::DailySeries;
    use crate::trees::{fit, EnsembleSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn frame(n: usize) -> SupervisedFrame {
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() * 3.0 + 0.05 * i as f64).collect();
        let s = DailySeries::new(NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(), n)
            .with_channel("y", y)
            .unwrap();
        make_frame(&s, &FrameSpec::new(&["y"], "y", 2, 1)).unwrap()
    }

    #[test]
    fn metric_hand_values() {
        let m = metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2, m.evar), (0.0, 0.0, Some(1.0), Some(1.0)));
        let m = metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(m.r2.unwrap().abs() < 1e-15 && m.evar.unwrap().abs() < 1e-15);
        let m = metrics(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]).unwrap();
        assert!((m.evar.unwrap() - 1.0).abs() < 1e-15);
        assert!(m.r2.unwrap() < 1.0);
        let m = metrics(&[4.0; 3], &[4.0, 5.0, 4.0]).unwrap();
        assert_eq!((m.r2, m.evar), (None, None));
        assert!(metrics(&[], &[]).is_err());
        assert!(metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ci_arithmetic() {
        assert_eq!(pointwise_ci(&[10.0; 4]), 0.0);
        let s = (3.0f64 / 2.0).sqrt();
        let preds = [-s, 0.0, 0.0, s];
        assert!((sample_std(&preds) - 1.0).abs() < 1e-12);
        assert!((pointwise_ci(&preds) - 0.98).abs() < 1e-12);
        assert_eq!(pointwise_ci(&[7.0]), 0.0);
    }

    #[test]
    fn naive_forecast_on_ramp_and_constant() {
        let s = DailySeries::new(NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(), 10)
            .with_channel("y", (0..10).map(|i| 2.5 * i as f64).collect())
            .unwrap()
            .with_channel("c", vec![3.0; 10])
            .unwrap();
        let f = make_frame(&s, &FrameSpec::new(&["y"], "y", 3, 1)).unwrap();
        let m = metrics(&f.target_column(0), &naive_forecast(&f).unwrap()).unwrap();
        assert!((m.mae - 2.5).abs() < 1e-12);
        let f = make_frame(&s, &FrameSpec::new(&["c"], "c", 3, 1)).unwrap();
        assert_eq!(metrics(&f.target_column(0), &naive_forecast(&f).unwrap()).unwrap().mae, 0.0);
        let f = make_frame(&s, &FrameSpec::new(&["c"], "c", 3, 2)).unwrap();
        assert!(naive_forecast(&f).is_err());
    }

    #[test]
    fn naive_on_random_walk() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = 0.7;
        let mut y = vec![0.0];
        for _ in 1..20_000 {
            let step: f64 = rng.sample(StandardNormal);
            y.push(y.last().unwrap() + sigma * step);
        }
        let s = DailySeries::new(NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(), y.len())
            .with_channel("y", y)
            .unwrap();
        let f = make_frame(&s, &FrameSpec::new(&["y"], "y", 1, 1)).unwrap();
        let m = metrics(&f.target_column(0), &naive_forecast(&f).unwrap()).unwrap();
        assert!((m.rmse - sigma).abs() < 0.1 * sigma);
    }

    #[test]
    fn traced_expanding_and_sliding() {
        let f = frame(22);
        assert_eq!(f.n_rows(), 20);
        let model = EnsembleSpec::gb(5, 2);
        let r = walk_forward(&f, &model, &WalkForwardSpec::new(8, 4, WindowMode::Expanding)).unwrap();
        let sizes: Vec<(usize, usize, usize)> =
            r.iteration_log.iter().map(|l| (l.train_start, l.train_end, l.window_index)).collect();
        assert_eq!(sizes, vec![(0, 12, 12), (0, 16, 16)]);
        let r = walk_forward(&f, &model, &WalkForwardSpec::new(8, 4, WindowMode::Sliding)).unwrap();
        let sizes: Vec<(usize, usize, usize)> =
            r.iteration_log.iter().map(|l| (l.train_start, l.train_end, l.window_index)).collect();
        assert_eq!(sizes, vec![(0, 12, 12), (4, 16, 16)]);
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn sample_must_leave_training_rows() {
        let f = frame(12);
        assert!(matches!(
            walk_forward(&f, &EnsembleSpec::gb(2, 1), &WalkForwardSpec::new(10, 1, WindowMode::Expanding)),
            Err(Error::InsufficientTrainingData { rows: 10, sample: 10 })
        ));
    }

    #[test]
    fn unit_roll_matches_one_step_reference() {
        let f = frame(60);
        let model = EnsembleSpec::gb(10, 2);
        let r = walk_forward(&f, &model, &WalkForwardSpec::new(15, 1, WindowMode::Expanding)).unwrap();
        assert_eq!(r.len(), 15);
        let rows = f.n_rows();
        for (k, i) in (rows - 15..rows).enumerate() {
            let train: Vec<usize> = (0..i).collect();
            let t = f.take(&train);
            let m = fit(&t.x, &t.target_column(0), &model).unwrap();
            let p = m.predict(&f.x.select_rows(&[i])).unwrap()[0];
            assert_eq!(r.predictions[k], p);
            assert_eq!(r.truth[k], f.y.get(i, 0));
        }
    }

    #[test]
    fn running_ci_uses_accumulated_predictions() {
        let f = frame(40);
        let r = walk_forward(&f, &EnsembleSpec::gb(5, 2), &WalkForwardSpec::new(10, 2, WindowMode::Expanding)).unwrap();
        assert!(r.degenerate_ci);
        assert_eq!(r.ci_half_width[0], 0.0);
        for k in 1..r.len() {
            assert!((r.ci_half_width[k] - pointwise_ci(&r.predictions[..=k])).abs() < 1e-12);
        }
        let mut spec = WalkForwardSpec::new(10, 2, WindowMode::Expanding);
        spec.ci_scope = CiScope::CurrentWindow;
        let r = walk_forward(&f, &EnsembleSpec::gb(5, 2), &spec).unwrap();
        assert!(r.ci_half_width.iter().all(|h| *h == 0.0));
    }

    #[test]
    fn multi_step_windows_are_purged() {
        let n = 40;
        let s = DailySeries::new(NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(), n)
            .with_channel("y", (0..n).map(|i| (i as f64).sqrt()).collect())
            .unwrap();
        let f = make_frame(&s, &FrameSpec::new(&["y"], "y", 2, 3)).unwrap();
        let r = walk_forward(&f, &EnsembleSpec::gb(3, 1), &WalkForwardSpec::new(6, 3, WindowMode::Expanding)).unwrap();
        for log in &r.iteration_log {
            // the last training row's targets end before the predicted row starts
            assert!(log.train_end - 1 + 3 <= log.window_index);
        }
        assert_eq!(r.len(), 2 * 3);
        assert_eq!(r.dates[1], f.target_date(r.iteration_log[0].window_index, 1));
    }

    #[test]
    fn protocol_warnings() {
        assert!(WalkForwardSpec::new(30, 1, WindowMode::Expanding).protocol_warnings(14).is_empty());
        assert_eq!(WalkForwardSpec::new(14, 7, WindowMode::Expanding).protocol_warnings(14).len(), 2);
        assert_eq!(WalkForwardSpec::new(30, 4, WindowMode::Expanding).protocol_warnings(7).len(), 2);
    }

    #[test]
    fn wilcoxon_exact_fixture() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 6], 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.03125).abs() < 1e-15);
        assert!(!r.same_distribution && r.exact);
        assert!(matches!(wilcoxon_signed_rank(&a, &a, 0.05), Err(Error::DegenerateSample)));
    }

    #[test]
    fn exact_distribution_matches_enumeration() {
        let d = [0.5, -1.5, 2.0, 2.0, -3.0, 4.5, 0.25, -0.25];
        let r = wilcoxon_signed_rank(&d, &[0.0; 8], 0.05).unwrap();
        let ranks = average_ranks(&d.iter().map(|v: &f64| v.abs()).collect::<Vec<_>>());
        let mut le = 0usize;
        for mask in 0u32..(1 << 8) {
            let wp: f64 = (0..8).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            if wp <= r.statistic + 1e-9 {
                le += 1;
            }
        }
        let p = (2.0 * le as f64 / 256.0).min(1.0);
        assert!((r.p_value - p).abs() < 1e-12);
    }

    #[test]
    fn normal_approximation_above_threshold() {
        let a: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let r = wilcoxon_signed_rank(&a, &vec![0.0; 40], 0.05).unwrap();
        assert!(!r.exact && r.p_value < 1e-6);
        let alt: Vec<f64> = (1..=40).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        let r = wilcoxon_signed_rank(&alt, &vec![0.0; 40], 0.05).unwrap();
        assert!(r.same_distribution);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae_and_is_permutation_invariant(
            pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..40),
            rot in 0usize..40,
        ) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            let m = metrics(&t, &p).unwrap();
            prop_assert!(m.rmse + 1e-12 >= m.mae && m.mae >= 0.0);
            let mut rotated = pairs.clone();
            rotated.rotate_left(rot % pairs.len());
            let (t2, p2): (Vec<f64>, Vec<f64>) = rotated.into_iter().unzip();
            let m2 = metrics(&t2, &p2).unwrap();
            prop_assert!((m.mae - m2.mae).abs() < 1e-9 && (m.rmse - m2.rmse).abs() < 1e-9);
        }

        #[test]
        fn ci_scale_equivariance(v in prop::collection::vec(-50.0f64..50.0, 1..30), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let a = pointwise_ci(&v) * k;
            let b = pointwise_ci(&scaled);
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }

        #[test]
        fn train_size_progression(n_sample in 4usize..20, n_roll in 1usize..5) {
            let f = frame(50);
            let model = EnsembleSpec::gb(2, 1);
            let exp = walk_forward(&f, &model, &WalkForwardSpec::new(n_sample, n_roll, WindowMode::Expanding)).unwrap();
            for w in exp.iteration_log.windows(2) {
                prop_assert_eq!(w[1].train_size, w[0].train_size + n_roll);
            }
            let sl = walk_forward(&f, &model, &WalkForwardSpec::new(n_sample, n_roll, WindowMode::Sliding)).unwrap();
            prop_assert!(sl.iteration_log.iter().all(|l| l.train_size == sl.iteration_log[0].train_size));
            if n_roll == 1 {
                let idx: Vec<usize> = exp.iteration_log.iter().map(|l| l.window_index).collect();
                prop_assert_eq!(idx, (f.n_rows() - n_sample..f.n_rows()).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn run_csv_round_trips() {
        let f = frame(40);
        let r = walk_forward(&f, &EnsembleSpec::gb(10, 2), &WalkForwardSpec::new(12, 2, WindowMode::Expanding)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let t = read_run_csv(buf.as_slice()).unwrap();
        assert_eq!(t.dates, r.dates);
        assert_eq!(t.truth, r.truth);
        assert_eq!(t.prediction, r.predictions);
        for (h, e) in t.ci_half_width().iter().zip(&r.ci_half_width) {
            assert!((h - e).abs() < 1e-12);
        }
        assert!(matches!(read_run_csv("a,b\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }
}
