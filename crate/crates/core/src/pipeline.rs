//! End-to-end run: preparation, decomposition, component models, tuning,
//! walk-forward sweep and report emission.
//!
//! Artifacts are written to a staging directory next to the output
//! directory and moved into place only when every stage has succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::{walk_forward, wilcoxon_signed_rank, BacktestReport, MetricSet, WilcoxonResult, WindowMode};
use crate::config::{InputKind, ModelFamily, PipelineConfig, PreprocessConfig, SweepRun};
use crate::emd::{decompose, DecomposeSpec, Decomposition};
use crate::error::{Error, Result, StageExt};
use crate::hilbert::{soh_inst_freq, FrequencySource};
use crate::ingest::{ingest_household, ingest_telemetry, HOUSEHOLD_CHANNEL};
use crate::preprocess::{
    ambient_within, clean_telemetry, daily_pulse_features, detect_pulses_with, equivalent_cycles,
    estimate_soh_with, fill_gaps_extending, mean_ambient, remove_outliers, OutlierSummary, SohConfig,
};
use crate::reframe::{make_frame, FrameSpec, PredictorSet, SplitSpec, SupervisedFrame, INST_FREQ_CHANNEL, SOH_CHANNEL};
use crate::series::{aggregate_daily, DailySeries, RawTelemetry, ReducerSpec};
use crate::svg::{line_chart, ChartData};
use crate::synth::synth_fleet;
use crate::trees::{fit_imf_predictors, grid_search, CvRow, EnsembleSpec, ImfPredictorConfig, TargetMode};

/// Daily series of one pack with every model channel filled.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBattery {
    pub series: DailySeries,
    pub pulses: usize,
    pub initial_capacity: f64,
    pub outliers: OutlierSummary,
    pub mean_ambient: f64,
}

/// Cleans telemetry, aggregates it per day and derives pulse features,
/// equivalent cycles and state of health. SoH outliers are removed and
/// every channel is imputed.
pub fn prepare_battery(raw: &RawTelemetry, cfg: &PreprocessConfig) -> Result<PreparedBattery> {
    let raw = clean_telemetry(raw);
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut series = aggregate_daily(&raw, &ReducerSpec::default())?;
    let start = series.start().ok_or(Error::EmptyInput)?;
    let len = series.len();
    let pulses = detect_pulses_with(&raw, &cfg.pulse);
    daily_pulse_features(&pulses, &mut series)?;
    series.insert_channel("cycles", equivalent_cycles(&pulses, start, len, 100.0).equivalent_cycles)?;
    let soh = estimate_soh_with(
        &pulses,
        start,
        len,
        &SohConfig {
            reference_days: cfg.reference_days,
        },
    )?;
    series.insert_channel(SOH_CHANNEL, soh.soh)?;
    let (mut series, outliers) = remove_outliers(&series, SOH_CHANNEL)?;
    let names: Vec<String> = series.channel_names().map(str::to_string).collect();
    for name in names {
        fill_gaps_extending(series.channel_mut(&name)?);
    }
    series.insert_channel("day_index", (0..len).map(|d| d as f64).collect())?;
    series.target = Some(SOH_CHANNEL.to_string());
    Ok(PreparedBattery {
        series,
        pulses: pulses.len(),
        initial_capacity: soh.initial_capacity,
        outliers,
        mean_ambient: mean_ambient(&raw),
    })
}

/// Decomposes `channel` and adds its lagged instantaneous frequency as
/// `soh_ifreq_lag1`.
pub fn decompose_channel(
    series: &DailySeries,
    channel: &str,
    spec: &DecomposeSpec,
    source: FrequencySource,
) -> Result<(DailySeries, Decomposition)> {
    let d = decompose(series.channel(channel)?, spec)?;
    let ifreq = soh_inst_freq(&d, source)?;
    let out = series.clone().with_channel(INST_FREQ_CHANNEL, ifreq)?;
    Ok((out, d))
}

/// The decomposed channel, its components and their reconstruction error.
pub fn decomposition_table(series: &DailySeries, channel: &str, d: &Decomposition) -> Result<DailySeries> {
    let start = series.start().ok_or(Error::EmptyInput)?;
    let mut out = DailySeries::with_frequency(start, series.len(), series.frequency);
    let source = series.channel(channel)?;
    out.insert_channel(channel, source.to_vec())?;
    for (name, values) in d.component_names().into_iter().zip(d.components()) {
        out.insert_channel(name, values.to_vec())?;
    }
    let err = source.iter().zip(d.reconstruct()).map(|(a, b)| a - b).collect();
    out.insert_channel("reconstruction_error", err)?;
    Ok(out)
}

/// Min-max scales a channel to [0, 1]; a constant channel maps to 0.
pub fn normalize_channel(series: &mut DailySeries, channel: &str) -> Result<()> {
    let values = series.channel_mut(channel)?;
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    for v in values.iter_mut().filter(|v| v.is_finite()) {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    Ok(())
}

/// Monthly household series with empty months imputed and, optionally,
/// min-max normalized.
pub fn household_series(path: impl AsRef<Path>, normalize: bool) -> Result<DailySeries> {
    let mut series = ingest_household(path)?;
    fill_gaps_extending(series.channel_mut(HOUSEHOLD_CHANNEL)?);
    if normalize {
        normalize_channel(&mut series, HOUSEHOLD_CHANNEL)?;
    }
    Ok(series)
}

/// Outcome of tuning one family on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub family: String,
    pub predictor_set: String,
    pub window: usize,
    pub tuning_rows: usize,
    pub tuned: bool,
    pub selected: EnsembleSpec,
    pub table: Vec<CvRow>,
}

/// Picks a spec from `grid` by cross-validation on the first `rows` rows of
/// `frame`. A single-spec grid, or too few rows for the folds, falls back to
/// the first spec.
pub fn tune_frame(
    frame: &SupervisedFrame,
    grid: &[EnsembleSpec],
    rows: usize,
    split: &SplitSpec,
    mode: TargetMode,
) -> Result<(EnsembleSpec, bool, Vec<CvRow>)> {
    let first = grid.first().ok_or_else(|| Error::InvalidSpec("empty model grid".into()))?;
    if grid.len() == 1 {
        return Ok((first.clone(), false, Vec::new()));
    }
    if rows < 2 * (split.folds + 1) {
        log::warn!("{rows} tuning rows cannot hold {} folds; using {}", split.folds, first.name());
        return Ok((first.clone(), false, Vec::new()));
    }
    let result = grid_search(&frame.slice(0..rows), grid, split.folds, mode)?;
    Ok((result.best, true, result.table))
}

/// One cell of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub battery: String,
    pub family: String,
    pub predictor_set: String,
    pub window: usize,
    pub sample: usize,
    pub roll: usize,
    pub mode: WindowMode,
    pub model: String,
    pub metrics: MetricSet,
    pub naive_metrics: MetricSet,
    pub degenerate_ci: bool,
    pub artifact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySummary {
    pub name: String,
    pub source: String,
    pub start: NaiveDate,
    pub steps: usize,
    pub pulses: Option<usize>,
    pub initial_capacity: Option<f64>,
    pub mean_ambient: Option<f64>,
    /// Least-squares slope of the prepared SoH series.
    pub soh_slope_pp_per_year: Option<f64>,
    /// Least-squares slope of the decomposition residue.
    pub residue_slope_pp_per_year: Option<f64>,
    pub outliers_removed: usize,
    pub n_imfs: Option<usize>,
    pub component_models: Vec<(String, String)>,
    pub cells: Vec<CellResult>,
    pub best: Option<CellResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetComparison {
    pub reference: String,
    pub battery: String,
    pub n: usize,
    pub result: Option<WilcoxonResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub seed: u64,
    pub input: InputKind,
    pub warnings: Vec<String>,
    pub skipped: Vec<String>,
    pub batteries: Vec<BatterySummary>,
    pub fleet: Vec<FleetComparison>,
}

impl RunSummary {
    pub fn cells(&self) -> impl Iterator<Item = &CellResult> {
        self.batteries.iter().flat_map(|b| &b.cells)
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn mode_label(mode: WindowMode) -> &'static str {
    match mode {
        WindowMode::Expanding => "expanding",
        WindowMode::Sliding => "sliding",
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_report(dir: &Path, name: &str, title: &str, y_label: &str, report: &BacktestReport) -> Result<()> {
    report.write_csv(fs::File::create(dir.join(format!("{name}.csv")))?)?;
    let mut json = report.metrics_json()?;
    json.push('\n');
    fs::write(dir.join(format!("{name}.json")), json)?;
    let svg = line_chart(&ChartData {
        title,
        y_label,
        dates: &report.dates,
        truth: &report.truth,
        prediction: &report.predictions,
        ci_half_width: &report.ci_half_width,
    });
    fs::write(dir.join(format!("{name}.svg")), svg)?;
    Ok(())
}

/// Frame per (predictor set, window) to sweep.
struct FramePlan {
    set: String,
    window: usize,
    frame: SupervisedFrame,
}

/// Tunes every family on every frame and runs the walk-forward sweep,
/// writing run artifacts into `dir/runs`.
fn sweep(
    battery: &str,
    plans: &[FramePlan],
    cfg: &PipelineConfig,
    runs: &[SweepRun],
    y_label: &str,
    dir: &Path,
) -> Result<(Vec<CellResult>, Vec<TuningRecord>)> {
    let run_dir = dir.join("runs");
    fs::create_dir_all(&run_dir)?;
    let mut cells = Vec::new();
    let mut tuning = Vec::new();
    for plan in plans {
        let here: Vec<&SweepRun> = runs.iter().filter(|r| r.window == plan.window).collect();
        let rows = plan.frame.n_rows();
        let max_sample = here.iter().map(|r| r.sample).max().unwrap_or(0);
        let tuning_rows = cfg.split.train_rows(rows).min(rows.saturating_sub(max_sample));
        for family in &cfg.models {
            let (spec, tuned, table) = tune_frame(&plan.frame, &family.grid, tuning_rows, &cfg.split, cfg.target_mode)
                .stage("tune")?;
            let spec = labelled(spec, family);
            tuning.push(TuningRecord {
                family: family.name.clone(),
                predictor_set: plan.set.clone(),
                window: plan.window,
                tuning_rows,
                tuned,
                selected: spec.clone(),
                table,
            });
            for run in &here {
                let wf = cfg.walk_forward_spec(run);
                let report = walk_forward(&plan.frame, &spec, &wf).stage("backtest")?;
                let name = format!(
                    "{}_{}_w{}_s{}_r{}_{}",
                    slug(&family.name),
                    slug(&plan.set),
                    run.window,
                    run.sample,
                    run.roll,
                    mode_label(run.mode)
                );
                let title = format!(
                    "{battery}: {} {} window {} sample {} roll {} {}",
                    family.name,
                    plan.set,
                    run.window,
                    run.sample,
                    run.roll,
                    mode_label(run.mode)
                );
                write_report(&run_dir, &name, &title, y_label, &report).stage("report")?;
                cells.push(CellResult {
                    battery: battery.to_string(),
                    family: family.name.clone(),
                    predictor_set: plan.set.clone(),
                    window: run.window,
                    sample: run.sample,
                    roll: run.roll,
                    mode: run.mode,
                    model: report.model.clone(),
                    metrics: report.metrics.clone(),
                    naive_metrics: report.naive_metrics.clone(),
                    degenerate_ci: report.degenerate_ci,
                    artifact: format!("{battery}/runs/{name}"),
                });
            }
        }
    }
    Ok((cells, tuning))
}

fn labelled(spec: EnsembleSpec, family: &ModelFamily) -> EnsembleSpec {
    if spec.label.is_some() {
        spec
    } else {
        spec.with_label(&family.name)
    }
}

/// Lowest-MAE cell; the first one wins ties.
pub fn best_cell(cells: &[CellResult]) -> Option<&CellResult> {
    cells
        .iter()
        .reduce(|best, c| if c.metrics.mae < best.metrics.mae { c } else { best })
}

fn finish_battery(
    mut summary: BatterySummary,
    cells: Vec<CellResult>,
    tuning: Vec<TuningRecord>,
    dir: &Path,
) -> Result<BatterySummary> {
    summary.best = best_cell(&cells).cloned();
    summary.cells = cells;
    write_json(&dir.join("tuning.json"), &tuning)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Full per-pack pipeline. Returns the summary and the prepared SoH series.
pub fn evaluate_battery(
    name: &str,
    source: &str,
    raw: &RawTelemetry,
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<(BatterySummary, DailySeries)> {
    fs::create_dir_all(dir)?;
    let prepared = prepare_battery(raw, &cfg.preprocess).stage("preprocess")?;
    let (series, d) =
        decompose_channel(&prepared.series, SOH_CHANNEL, &cfg.decompose, cfg.frequency_source).stage("decompose")?;
    decomposition_table(&series, SOH_CHANNEL, &d)?.write_csv(fs::File::create(dir.join("decomposition.csv"))?)?;

    let mut series = series;
    let mut component_models = Vec::new();
    if cfg.predictor_sets.contains(&PredictorSet::BasicImfs) {
        let imf_cfg = ImfPredictorConfig {
            past: cfg.component_past,
            split: cfg.split,
            ..ImfPredictorConfig::default()
        };
        let fitted = fit_imf_predictors(&series, &d, &cfg.component_grid, &imf_cfg).stage("components")?;
        component_models = fitted.selected.iter().map(|(c, s)| (c.clone(), s.name())).collect();
        series = fitted.series;
    }
    series.write_csv(fs::File::create(dir.join("daily.csv"))?)?;

    let runs = cfg.sweep.expand();
    let mut plans = Vec::new();
    for &set in &cfg.predictor_sets {
        for window in cfg.sweep.windows() {
            let spec = set.frame_spec(SOH_CHANNEL, d.n_imfs(), window - 1, 1);
            let frame = make_frame(&series, &spec).stage("reframe")?;
            plans.push(FramePlan {
                set: set.label().to_string(),
                window,
                frame,
            });
        }
    }
    let (cells, tuning) = sweep(name, &plans, cfg, &runs, "SoH (%)", dir)?;
    let soh = prepared.series.channel(SOH_CHANNEL)?;
    let summary = BatterySummary {
        name: name.to_string(),
        source: source.to_string(),
        start: prepared.series.start().ok_or(Error::EmptyInput)?,
        steps: prepared.series.len(),
        pulses: Some(prepared.pulses),
        initial_capacity: Some(prepared.initial_capacity),
        mean_ambient: Some(prepared.mean_ambient),
        soh_slope_pp_per_year: Some(crate::stats::linear_slope(soh) * 365.25),
        residue_slope_pp_per_year: Some(crate::stats::linear_slope(&d.residue) * 365.25),
        outliers_removed: prepared.outliers.removed,
        n_imfs: Some(d.n_imfs()),
        component_models,
        cells: Vec::new(),
        best: None,
    };
    Ok((finish_battery(summary, cells, tuning, dir)?, prepared.series))
}

/// Single-channel pipeline for the monthly household series: the frame
/// holds only the lagged target.
pub fn evaluate_household(
    name: &str,
    source: &str,
    series: &DailySeries,
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<BatterySummary> {
    fs::create_dir_all(dir)?;
    series.write_csv(fs::File::create(dir.join("monthly.csv"))?)?;
    let runs = cfg.sweep.expand();
    let mut plans = Vec::new();
    for window in cfg.sweep.windows() {
        let spec = FrameSpec::new(&[HOUSEHOLD_CHANNEL], HOUSEHOLD_CHANNEL, window - 1, 1);
        plans.push(FramePlan {
            set: "lagged".into(),
            window,
            frame: make_frame(series, &spec).stage("reframe")?,
        });
    }
    let y_label = if cfg.preprocess.normalize { "power (normalized)" } else { "power (kW)" };
    let (cells, tuning) = sweep(name, &plans, cfg, &runs, y_label, dir)?;
    let summary = BatterySummary {
        name: name.to_string(),
        source: source.to_string(),
        start: series.start().ok_or(Error::EmptyInput)?,
        steps: series.len(),
        pulses: None,
        initial_capacity: None,
        mean_ambient: None,
        soh_slope_pp_per_year: None,
        residue_slope_pp_per_year: None,
        outliers_removed: 0,
        n_imfs: None,
        component_models: Vec::new(),
        cells: Vec::new(),
        best: None,
    };
    finish_battery(summary, cells, tuning, dir)
}

/// Signed-rank comparison of the first pack's SoH against every other pack
/// over their shared dates.
pub fn fleet_comparison(series: &[(String, DailySeries)], alpha: f64) -> Vec<FleetComparison> {
    let Some((ref_name, reference)) = series.first() else {
        return Vec::new();
    };
    series[1..]
        .iter()
        .map(|(name, other)| {
            let mut a = Vec::new();
            let mut b = Vec::new();
            if let (Ok(ra), Ok(rb)) = (reference.channel(SOH_CHANNEL), other.channel(SOH_CHANNEL)) {
                for (i, date) in reference.dates().iter().enumerate() {
                    if let Some(j) = other.index_of(*date) {
                        a.push(ra[i]);
                        b.push(rb[j]);
                    }
                }
            }
            let (result, error) = match wilcoxon_signed_rank(&a, &b, alpha) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            FleetComparison {
                reference: ref_name.clone(),
                battery: name.clone(),
                n: a.len(),
                result,
                error,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Sweep table: one row per cell, `best` marks each pack's lowest-MAE cell.
pub fn write_comparison<W: std::io::Write>(summary: &RunSummary, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "battery",
        "family",
        "predictor_set",
        "window",
        "sample",
        "roll",
        "mode",
        "model",
        "mae",
        "rmse",
        "r2",
        "evar",
        "naive_mae",
        "naive_rmse",
        "best",
    ])
    .map_err(io)?;
    for b in &summary.batteries {
        for c in &b.cells {
            let best = b.best.as_ref() == Some(c);
            w.write_record([
                c.battery.clone(),
                c.family.clone(),
                c.predictor_set.clone(),
                c.window.to_string(),
                c.sample.to_string(),
                c.roll.to_string(),
                mode_label(c.mode).to_string(),
                c.model.clone(),
                c.metrics.mae.to_string(),
                c.metrics.rmse.to_string(),
                opt(c.metrics.r2),
                opt(c.metrics.evar),
                c.naive_metrics.mae.to_string(),
                c.naive_metrics.rmse.to_string(),
                best.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_into(cfg: &PipelineConfig, dir: &Path, warnings: Vec<String>) -> Result<RunSummary> {
    let mut skipped = Vec::new();
    let (batteries, fleet) = match cfg.input.kind {
        InputKind::Household => {
            let results: Vec<BatterySummary> = cfg
                .input
                .paths
                .par_iter()
                .enumerate()
                .map(|(i, path)| {
                    let name = format!("household_{i:02}");
                    let series = household_series(path, cfg.preprocess.normalize).stage("ingest")?;
                    evaluate_household(&name, &path.display().to_string(), &series, cfg, &dir.join(&name))
                })
                .collect::<Result<_>>()?;
            (results, Vec::new())
        }
        kind => {
            let packs: Vec<(String, RawTelemetry)> = if kind == InputKind::Synthetic {
                synth_fleet(&cfg.synth)
                    .stage("synth")?
                    .into_iter()
                    .enumerate()
                    .map(|(i, raw)| (format!("synthetic:{i}"), raw))
                    .collect()
            } else {
                cfg.input
                    .paths
                    .iter()
                    .map(|p| Ok((p.display().to_string(), ingest_telemetry(p)?)))
                    .collect::<Result<_>>()
                    .stage("ingest")?
            };
            let mut kept = Vec::new();
            for (i, (source, raw)) in packs.into_iter().enumerate() {
                let name = format!("battery_{i:02}");
                if let Some([lo, hi]) = cfg.preprocess.ambient_band {
                    if !ambient_within(&raw, (lo, hi)) {
                        log::info!("{name}: mean ambient outside [{lo}, {hi}], skipped");
                        skipped.push(name);
                        continue;
                    }
                }
                kept.push((name, source, raw));
            }
            let results: Vec<(BatterySummary, DailySeries)> = kept
                .par_iter()
                .map(|(name, source, raw)| evaluate_battery(name, source, raw, cfg, &dir.join(name)))
                .collect::<Result<_>>()?;
            let soh: Vec<(String, DailySeries)> = results.iter().map(|(s, d)| (s.name.clone(), d.clone())).collect();
            let fleet = fleet_comparison(&soh, cfg.alpha);
            (results.into_iter().map(|(s, _)| s).collect(), fleet)
        }
    };
    if batteries.is_empty() {
        return Err(Error::EmptyInput.in_stage("ingest"));
    }
    let summary = RunSummary {
        schema: crate::config::SCHEMA_VERSION,
        seed: cfg.seed,
        input: cfg.input.kind,
        warnings,
        skipped,
        batteries,
        fleet,
    };
    write_comparison(&summary, fs::File::create(dir.join("comparison.csv"))?)?;
    if !summary.fleet.is_empty() {
        write_json(&dir.join("fleet_wilcoxon.json"), &summary.fleet)?;
    }
    let mut effective = cfg.clone();
    effective.output_dir = PathBuf::from(".");
    fs::write(dir.join("config.toml"), effective.to_toml()?)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!(".{name}.staging"))
}

/// Runs the configured pipeline into `cfg.output_dir`. The top-level seed
/// drives every random component. An existing output directory is replaced
/// only if it holds a previous run (a `summary.json`).
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    let cfg = cfg.clone().with_seed(cfg.seed);
    cfg.validate()?;
    let warnings = cfg.protocol_warnings();
    for w in &warnings {
        log::warn!("{w}");
    }
    let out = cfg.output_dir.clone();
    if out.exists() {
        let empty = out.is_dir() && fs::read_dir(&out)?.next().is_none();
        if !empty && !out.join("summary.json").is_file() {
            return Err(Error::InvalidSpec(format!(
                "{} exists and does not hold a previous run",
                out.display()
            ))
            .in_stage("config"));
        }
    }
    let staging = staging_dir(&out);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidSpec(e.to_string()).in_stage("config"))?;
    match pool.install(|| run_into(&cfg, &staging, warnings)) {
        Ok(summary) => {
            if out.exists() {
                fs::remove_dir_all(&out)?;
            }
            fs::rename(&staging, &out)?;
            Ok(summary)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}
