use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sohcast_core::backtest::{read_run_csv, walk_forward, CiScope, WalkForwardSpec, WindowMode};
use sohcast_core::config::PipelineConfig;
use sohcast_core::emd::DecomposeSpec;
use sohcast_core::hilbert::FrequencySource;
use sohcast_core::ingest::{ingest_telemetry, write_telemetry, HOUSEHOLD_CHANNEL};
use sohcast_core::pipeline::{decompose_channel, decomposition_table, household_series, prepare_battery, tune_frame};
use sohcast_core::reframe::{make_frame, FrameSpec, PredictorSet, SplitSpec, SupervisedFrame, SOH_CHANNEL};
use sohcast_core::series::DailySeries;
use sohcast_core::svg::{line_chart, ChartData};
use sohcast_core::synth::{synth_fleet, FaultSpec, FleetSynthSpec};
use sohcast_core::trees::{fit_frame, EnsembleSpec, Method, TargetMode};
use sohcast_core::{Error, Result};

#[derive(Parser)]
#[command(name = "sohcast", version, about = "Battery state-of-health forecasting from pack telemetry")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw input into a regular series CSV.
    Ingest(IngestArgs),
    /// Generate a synthetic fleet of telemetry CSVs.
    Synth(SynthArgs),
    /// Decompose one channel and add its lagged instantaneous frequency.
    Decompose(DecomposeArgs),
    /// Cross-validate a model grid on the training split of a frame.
    Tune(TuneArgs),
    /// Walk-forward backtest of one model.
    Backtest(BacktestArgs),
    /// Charts and a metrics table from run CSVs.
    Report(ReportArgs),
    /// Full pipeline from a TOML config.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Telemetry,
    Household,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, value_enum, default_value = "telemetry")]
    format: InputFormat,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Min-max scale the household channel.
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = 14)]
    reference_days: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    batteries: usize,
    #[arg(long, default_value_t = 3.0)]
    years: f64,
    /// Capacity loss, percentage points per year.
    #[arg(long, default_value_t = 2.2)]
    degradation: f64,
    #[arg(long, default_value_t = 4.0)]
    temp_amplitude: f64,
    #[arg(long, default_value_t = 2.0)]
    pulse_rate: f64,
    /// Inject this many fault bursts per battery.
    #[arg(long)]
    fault_bursts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Series CSV as written by `ingest`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = SOH_CHANNEL)]
    channel: String,
    /// Components and reconstruction error.
    #[arg(long)]
    output: PathBuf,
    /// Input series plus the frequency channel.
    #[arg(long)]
    augmented: Option<PathBuf>,
    /// Noisy realizations; 1 runs plain EMD.
    #[arg(long, default_value_t = 100)]
    ensemble: usize,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, value_enum, default_value = "dominant-imf")]
    frequency_source: FreqSource,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FreqSource {
    DominantImf,
    FirstImf,
    AmplitudeWeighted,
}

impl From<FreqSource> for FrequencySource {
    fn from(f: FreqSource) -> Self {
        match f {
            FreqSource::DominantImf => FrequencySource::DominantImf,
            FreqSource::FirstImf => FrequencySource::FirstImf,
            FreqSource::AmplitudeWeighted => FrequencySource::AmplitudeWeighted,
        }
    }
}

#[derive(Args)]
struct FrameArgs {
    /// Series CSV (`ingest` or `decompose --augmented` output).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    target: Option<String>,
    /// imfs, basic, basic+imfs, or lagged (target lags only).
    #[arg(long, default_value = "basic")]
    predictor_set: String,
    /// Past steps plus the one-step horizon.
    #[arg(long, default_value_t = 14)]
    window: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gb,
    Rf,
    Etr,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gb => Method::GB,
            MethodArg::Rf => Method::RF,
            MethodArg::Etr => Method::ETR,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Level,
    Increment,
}

impl From<TargetArg> for TargetMode {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Level => TargetMode::Level,
            TargetArg::Increment => TargetMode::Increment,
        }
    }
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    frame: FrameArgs,
    #[arg(long, value_enum, default_value = "gb")]
    method: MethodArg,
    #[arg(long, value_delimiter = ',', default_value = "100,200")]
    estimators: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    depths: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_enum, default_value = "level")]
    target_mode: TargetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CV table and selected spec.
    #[arg(long)]
    output: PathBuf,
    /// Also fit the selected spec on the training split and save it.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Expanding,
    Sliding,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    frame: FrameArgs,
    /// Model spec JSON (e.g. `selected` from `tune`); overrides the method flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gb")]
    method: MethodArg,
    #[arg(long, default_value_t = 100)]
    estimators: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 30)]
    sample: usize,
    #[arg(long, default_value_t = 1)]
    roll: usize,
    #[arg(long, value_enum, default_value = "expanding")]
    mode: ModeArg,
    /// Build intervals from the current iteration's predictions only.
    #[arg(long)]
    current_window_ci: bool,
    #[arg(long, default_value_t = 1.96)]
    critical_value: f64,
    #[arg(long, value_enum, default_value = "level")]
    target_mode: TargetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes `<prefix>.csv`, `<prefix>.json` and `<prefix>.svg`.
    #[arg(long)]
    output_prefix: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run CSVs (date,truth,prediction,ci_lo,ci_hi).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for one SVG per input.
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value = "SoH (%)")]
    y_label: String,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(File::create(path)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes())?;
    Ok(())
}

fn read_series(path: &Path) -> Result<DailySeries> {
    DailySeries::read_csv(File::open(path)?)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let series = match a.format {
        InputFormat::Household => household_series(&a.input, a.normalize)?,
        InputFormat::Telemetry => {
            let raw = ingest_telemetry(&a.input)?;
            let cfg = sohcast_core::config::PreprocessConfig {
                reference_days: a.reference_days,
                ..Default::default()
            };
            let p = prepare_battery(&raw, &cfg)?;
            log::info!("{} days, {} pulses, {} SoH outliers", p.series.len(), p.pulses, p.outliers.removed);
            p.series
        }
    };
    series.write_csv(create(&a.output)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = FleetSynthSpec {
        n_batteries: a.batteries,
        years: a.years,
        degradation_pp_per_year: a.degradation,
        temp_amplitude: a.temp_amplitude,
        pulse_rate_per_day: a.pulse_rate,
        faults: a.fault_bursts.map(|bursts| FaultSpec {
            bursts,
            ..FaultSpec::default()
        }),
        seed: a.seed,
        ..FleetSynthSpec::default()
    };
    let fleet = synth_fleet(&spec)?;
    fs::create_dir_all(&a.output)?;
    for (i, raw) in fleet.iter().enumerate() {
        write_telemetry(raw, File::create(a.output.join(format!("battery_{i:02}.csv")))?)?;
    }
    println!("wrote {} batteries to {}", fleet.len(), a.output.display());
    Ok(())
}

fn decompose(a: DecomposeArgs) -> Result<()> {
    let series = read_series(&a.input)?;
    let spec = DecomposeSpec {
        ensemble_size: a.ensemble,
        noise_std: a.noise,
        seed: a.seed,
        ..DecomposeSpec::default()
    };
    let (augmented, d) = decompose_channel(&series, &a.channel, &spec, a.frequency_source.into())?;
    decomposition_table(&series, &a.channel, &d)?.write_csv(create(&a.output)?)?;
    if let Some(path) = &a.augmented {
        augmented.write_csv(create(path)?)?;
    }
    println!("{} IMFs plus residue", d.n_imfs());
    Ok(())
}

fn build_frame(a: &FrameArgs) -> Result<SupervisedFrame> {
    if a.window < 2 {
        return Err(Error::InvalidSpec("window must be at least 2".into()));
    }
    let series = read_series(&a.input)?;
    let target = match &a.target {
        Some(t) => t.clone(),
        None if series.has_channel(SOH_CHANNEL) => SOH_CHANNEL.to_string(),
        None => HOUSEHOLD_CHANNEL.to_string(),
    };
    let past = a.window - 1;
    let spec = if a.predictor_set == "lagged" {
        FrameSpec::new(&[target.as_str()], &target, past, 1)
    } else {
        let set = PredictorSet::parse(&a.predictor_set)?;
        let n_imfs = series
            .channel_names()
            .filter(|c| c.starts_with("imf_") && c.ends_with("_pred"))
            .count();
        set.frame_spec(&target, n_imfs, past, 1)
    };
    make_frame(&series, &spec)
}

fn ensemble(method: MethodArg, n: usize, depth: usize, lr: f64, seed: u64) -> EnsembleSpec {
    let mut spec = match Method::from(method) {
        Method::GB => EnsembleSpec::gb(n, depth),
        Method::RF => EnsembleSpec::rf(n, depth),
        Method::ETR => EnsembleSpec::etr(n, depth),
    };
    spec.learning_rate = lr;
    spec.with_seed(seed)
}

fn tune(a: TuneArgs) -> Result<()> {
    let frame = build_frame(&a.frame)?;
    let grid: Vec<EnsembleSpec> = a
        .estimators
        .iter()
        .flat_map(|&n| a.depths.iter().map(move |&d| (n, d)))
        .map(|(n, d)| ensemble(a.method, n, d, a.learning_rate, a.seed))
        .collect();
    let split = SplitSpec {
        train_fraction: a.train_fraction,
        folds: a.folds,
    };
    split.validate()?;
    let rows = split.train_rows(frame.n_rows());
    let mode = TargetMode::from(a.target_mode);
    let (best, tuned, table) = tune_frame(&frame, &grid, rows, &split, mode)?;
    let doc = serde_json::json!({
        "tuning_rows": rows,
        "tuned": tuned,
        "selected": best,
        "table": table,
    });
    write_text(&a.output, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    for row in &table {
        println!("{:<32} {:.5}", row.name, row.mean_mae);
    }
    println!("selected {}", best.name());
    if let Some(path) = &a.model {
        let model = fit_frame(&frame.slice(0..rows), &best, mode)?;
        write_text(path, &(serde_json::to_string(&model)? + "\n"))?;
    }
    Ok(())
}

fn backtest(a: BacktestArgs) -> Result<()> {
    let frame = build_frame(&a.frame)?;
    let spec = match &a.spec {
        Some(path) => serde_json::from_str::<EnsembleSpec>(&fs::read_to_string(path)?)?,
        None => ensemble(a.method, a.estimators, a.depth, a.learning_rate, a.seed),
    };
    spec.validate()?;
    let wf = WalkForwardSpec {
        n_sample: a.sample,
        n_roll: a.roll,
        mode: match a.mode {
            ModeArg::Expanding => WindowMode::Expanding,
            ModeArg::Sliding => WindowMode::Sliding,
        },
        ci_scope: if a.current_window_ci { CiScope::CurrentWindow } else { CiScope::Running },
        critical_value: a.critical_value,
        target_mode: a.target_mode.into(),
    };
    for w in wf.protocol_warnings(a.frame.window) {
        log::warn!("{w}");
    }
    let report = walk_forward(&frame, &spec, &wf)?;
    let prefix = a.output_prefix.to_string_lossy().into_owned();
    report.write_csv(create(Path::new(&format!("{prefix}.csv")))?)?;
    fs::write(format!("{prefix}.json"), report.metrics_json()? + "\n")?;
    let title = format!("{} sample {} window {} roll {}", report.model, a.sample, a.frame.window, a.roll);
    let svg = line_chart(&ChartData {
        title: &title,
        y_label: &frame.target,
        dates: &report.dates,
        truth: &report.truth,
        prediction: &report.predictions,
        ci_half_width: &report.ci_half_width,
    });
    fs::write(format!("{prefix}.svg"), svg)?;
    println!(
        "{}: MAE {:.4} RMSE {:.4} (naive MAE {:.4} RMSE {:.4})",
        report.model, report.metrics.mae, report.metrics.rmse, report.naive_metrics.mae, report.naive_metrics.rmse
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    fs::create_dir_all(&a.output_dir)?;
    println!("| run | n | MAE | RMSE |");
    println!("|---|---|---|---|");
    for path in &a.inputs {
        let t = read_run_csv(File::open(path)?)?;
        let m = sohcast_core::backtest::metrics(&t.truth, &t.prediction)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let svg = line_chart(&ChartData {
            title: &stem,
            y_label: &a.y_label,
            dates: &t.dates,
            truth: &t.truth,
            prediction: &t.prediction,
            ci_half_width: &t.ci_half_width(),
        });
        fs::write(a.output_dir.join(format!("{stem}.svg")), svg)?;
        println!("| {stem} | {} | {:.4} | {:.4} |", m.n, m.mae, m.rmse);
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(out) = a.output {
        cfg.output_dir = out;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    let summary = sohcast_core::pipeline::run(&cfg)?;
    for b in &summary.batteries {
        if let Some(best) = &b.best {
            println!(
                "{}: best {} {} window {} sample {} roll {}: MAE {:.4} RMSE {:.4} (naive {:.4})",
                b.name,
                best.model,
                best.predictor_set,
                best.window,
                best.sample,
                best.roll,
                best.metrics.mae,
                best.metrics.rmse,
                best.naive_metrics.rmse
            );
        }
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Decompose(a) => decompose(a),
        Command::Tune(a) => tune(a),
        Command::Backtest(a) => backtest(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
