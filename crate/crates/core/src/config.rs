//! Versioned TOML pipeline configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::{CiScope, WalkForwardSpec, WindowMode, CRITICAL_VALUE};
use crate::emd::DecomposeSpec;
use crate::error::{Error, Result};
use crate::hilbert::FrequencySource;
use crate::preprocess::PulseConfig;
use crate::reframe::{PredictorSet, SplitSpec};
use crate::synth::FleetSynthSpec;
use crate::trees::{component_grid, EnsembleSpec, TargetMode};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    #[default]
    Synthetic,
    Telemetry,
    Household,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub kind: InputKind,
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Packs whose mean ambient temperature falls outside this band are skipped.
    pub ambient_band: Option<[f64; 2]>,
    pub reference_days: usize,
    pub pulse: PulseConfig,
    /// Min-max scale single-channel (household) series before modelling.
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            ambient_band: None,
            reference_days: 14,
            pulse: PulseConfig::default(),
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepRun {
    /// Past steps plus the one-step horizon.
    pub window: usize,
    pub sample: usize,
    pub roll: usize,
    pub mode: WindowMode,
    /// Accept a run outside `sample > window > 2 x roll` without a warning.
    pub waive: bool,
}

impl Default for SweepRun {
    fn default() -> Self {
        Self {
            window: 14,
            sample: 30,
            roll: 1,
            mode: WindowMode::Expanding,
            waive: false,
        }
    }
}

/// Either an explicit run list or the cartesian product of the value lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub windows: Vec<usize>,
    pub samples: Vec<usize>,
    pub rolls: Vec<usize>,
    pub modes: Vec<WindowMode>,
    pub waive_protocol: bool,
    pub runs: Vec<SweepRun>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            windows: vec![14],
            samples: vec![30],
            rolls: vec![1],
            modes: vec![WindowMode::Expanding],
            waive_protocol: false,
            runs: Vec::new(),
        }
    }
}

impl SweepConfig {
    pub fn expand(&self) -> Vec<SweepRun> {
        if !self.runs.is_empty() {
            return self.runs.clone();
        }
        let mut out = Vec::new();
        for &window in &self.windows {
            for &sample in &self.samples {
                for &roll in &self.rolls {
                    for &mode in &self.modes {
                        out.push(SweepRun {
                            window,
                            sample,
                            roll,
                            mode,
                            waive: self.waive_protocol,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn windows(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.expand().iter().map(|r| r.window).collect();
        w.sort_unstable();
        w.dedup();
        w
    }
}

/// A named model family and the grid it is tuned over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFamily {
    pub name: String,
    pub grid: Vec<EnsembleSpec>,
}

pub fn default_families() -> Vec<ModelFamily> {
    vec![ModelFamily {
        name: "GB".into(),
        grid: vec![EnsembleSpec::gb(100, 2), EnsembleSpec::gb(200, 3)],
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub input: InputConfig,
    pub synth: FleetSynthSpec,
    pub preprocess: PreprocessConfig,
    pub decompose: DecomposeSpec,
    pub frequency_source: FrequencySource,
    pub predictor_sets: Vec<PredictorSet>,
    pub sweep: SweepConfig,
    pub models: Vec<ModelFamily>,
    pub component_grid: Vec<EnsembleSpec>,
    pub component_past: usize,
    pub split: SplitSpec,
    pub target_mode: TargetMode,
    pub ci_scope: CiScope,
    pub critical_value: f64,
    pub alpha: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            seed: 0,
            output_dir: PathBuf::from("sohcast-out"),
            workers: 0,
            input: InputConfig::default(),
            synth: FleetSynthSpec::default(),
            preprocess: PreprocessConfig::default(),
            decompose: DecomposeSpec::default(),
            frequency_source: FrequencySource::default(),
            predictor_sets: vec![PredictorSet::Basic, PredictorSet::BasicImfs],
            sweep: SweepConfig::default(),
            models: default_families(),
            component_grid: component_grid(0)[..2].to_vec(),
            component_past: 7,
            split: SplitSpec {
                train_fraction: 0.7,
                folds: 5,
            },
            target_mode: TargetMode::Level,
            ci_scope: CiScope::Running,
            critical_value: CRITICAL_VALUE,
            alpha: 0.05,
        }
    }
}

fn config_err(message: impl Into<String>) -> Error {
    Error::InvalidSpec(message.into()).in_stage("config")
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Io(e).in_stage("config"))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        let wrap = |e: Error| e.in_stage("config");
        match self.input.kind {
            InputKind::Synthetic => self.synth.validate().map_err(wrap)?,
            _ if self.input.paths.is_empty() => return Err(config_err("input.paths is empty")),
            _ => {}
        }
        self.split.validate().map_err(wrap)?;
        if self.models.is_empty() || self.models.iter().any(|m| m.grid.is_empty()) {
            return Err(config_err("every model family needs a non-empty grid"));
        }
        for spec in self.models.iter().flat_map(|m| &m.grid).chain(&self.component_grid) {
            spec.validate().map_err(wrap)?;
        }
        if self.predictor_sets.is_empty() {
            return Err(config_err("predictor_sets is empty"));
        }
        if self.predictor_sets.contains(&PredictorSet::BasicImfs) && self.component_grid.is_empty() {
            return Err(config_err("basic+imfs needs a component grid"));
        }
        let runs = self.sweep.expand();
        if runs.is_empty() {
            return Err(config_err("the sweep is empty"));
        }
        for r in &runs {
            if r.window < 2 || r.sample == 0 || r.roll == 0 {
                return Err(config_err(format!(
                    "window {} / sample {} / roll {} is not runnable",
                    r.window, r.sample, r.roll
                )));
            }
        }
        if self.component_past == 0 {
            return Err(config_err("component_past must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.critical_value > 0.0) {
            return Err(config_err("alpha must lie in (0, 1) and critical_value be positive"));
        }
        Ok(())
    }

    /// Propagates the top-level seed into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.decompose.seed = seed;
        for spec in self.models.iter_mut().flat_map(|m| m.grid.iter_mut()).chain(self.component_grid.iter_mut()) {
            spec.seed = seed;
        }
        self
    }

    pub fn walk_forward_spec(&self, run: &SweepRun) -> WalkForwardSpec {
        WalkForwardSpec {
            n_sample: run.sample,
            n_roll: run.roll,
            mode: run.mode,
            ci_scope: self.ci_scope,
            critical_value: self.critical_value,
            target_mode: self.target_mode,
        }
    }

    /// Protocol warnings for runs that are not waived.
    pub fn protocol_warnings(&self) -> Vec<String> {
        self.sweep
            .expand()
            .iter()
            .filter(|r| !r.waive)
            .flat_map(|r| self.walk_forward_spec(r).protocol_warnings(r.window))
            .collect()
    }
}
