//! Regression tree ensembles written from scratch: gradient boosting with
//! row and column subsampling, random forest, and extremely randomized trees.
//! Squared-error loss, mean-valued leaves.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emd::Decomposition;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::reframe::{make_frame, ts_cv_folds, PredictorSet, SplitSpec, SupervisedFrame};
use crate::series::DailySeries;

pub const MODEL_FORMAT: &str = "sohcast.ensemble.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Exhaustive,
    RandomThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeSpec {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub colsample_by_tree: f64,
    pub colsample_by_level: f64,
    pub colsample_by_node: f64,
    pub split_mode: SplitMode,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            max_depth: 3,
            min_samples_leaf: 1,
            colsample_by_tree: 1.0,
            colsample_by_level: 1.0,
            colsample_by_node: 1.0,
            split_mode: SplitMode::Exhaustive,
        }
    }
}

impl TreeSpec {
    pub fn with_depth(max_depth: usize) -> Self {
        Self {
            max_depth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 || self.min_samples_leaf < 1 {
            return Err(Error::InvalidSpec("max_depth and min_samples_leaf must be at least 1".into()));
        }
        for (name, v) in [
            ("colsample_by_tree", self.colsample_by_tree),
            ("colsample_by_level", self.colsample_by_level),
            ("colsample_by_node", self.colsample_by_node),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidSpec(format!("{name} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    GB,
    RF,
    ETR,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GB => "GB",
            Method::RF => "RF",
            Method::ETR => "ETR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSpec {
    pub method: Method,
    pub n_estimators: usize,
    /// Shrinkage, GB only.
    pub learning_rate: f64,
    /// Row fraction per tree. GB draws without replacement.
    pub subsample: f64,
    /// Redraw the GB row sample every k trees; 0 redraws for every tree.
    pub subsample_freq: usize,
    /// RF bootstrap resampling.
    pub bootstrap: bool,
    /// ETR always splits at random thresholds regardless of `tree.split_mode`.
    pub tree: TreeSpec,
    pub seed: u64,
    /// Display name such as "XGB" or "LGB".
    pub label: Option<String>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            method: Method::GB,
            n_estimators: 100,
            learning_rate: 0.1,
            subsample: 1.0,
            subsample_freq: 0,
            bootstrap: true,
            tree: TreeSpec::default(),
            seed: 0,
            label: None,
        }
    }
}

impl EnsembleSpec {
    pub fn gb(n_estimators: usize, max_depth: usize) -> Self {
        Self {
            n_estimators,
            tree: TreeSpec::with_depth(max_depth),
            ..Self::default()
        }
    }

    pub fn rf(n_estimators: usize, max_depth: usize) -> Self {
        Self {
            method: Method::RF,
            ..Self::gb(n_estimators, max_depth)
        }
    }

    pub fn etr(n_estimators: usize, max_depth: usize) -> Self {
        Self {
            method: Method::ETR,
            bootstrap: false,
            tree: TreeSpec {
                split_mode: SplitMode::RandomThreshold,
                ..TreeSpec::with_depth(max_depth)
            },
            ..Self::gb(n_estimators, max_depth)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    pub fn name(&self) -> String {
        let family = self.label.clone().unwrap_or_else(|| self.method.name().to_string());
        format!("{family}(n={},depth={})", self.n_estimators, self.tree.max_depth)
    }

    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        if self.n_estimators < 1 {
            return Err(Error::InvalidSpec("n_estimators must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidSpec("learning_rate must lie in (0, 1]".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidSpec("subsample must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn split_mode(&self) -> SplitMode {
        match self.method {
            Method::ETR => SplitMode::RandomThreshold,
            _ => self.tree.split_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root first.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

fn sample_subset<R: Rng>(pool: &[usize], frac: f64, rng: &mut R) -> Vec<usize> {
    let k = ((frac * pool.len() as f64).round() as usize).clamp(1, pool.len().max(1));
    if k >= pool.len() {
        return pool.to_vec();
    }
    let mut picked: Vec<usize> = sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

/// Presorted-column tree builder. Each node owns the range `[lo, hi)` of every
/// per-feature order list; splitting stable-partitions those ranges.
struct Builder<'a, R: Rng> {
    spec: &'a TreeSpec,
    mode: SplitMode,
    features: Vec<usize>,
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    order: Vec<Vec<u32>>,
    level_sets: Vec<Vec<usize>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    nodes: Vec<Node>,
    rng: &'a mut R,
}

struct Candidate {
    gain: f64,
    pos: usize,
    threshold: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = hi - lo;
        let mean = self.order[0][lo..hi].iter().map(|&i| self.y[i as usize]).sum::<f64>() / n as f64;
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= self.spec.max_depth || n < 2 * self.spec.min_samples_leaf {
            return id;
        }
        let sse: f64 = self.order[0][lo..hi]
            .iter()
            .map(|&i| (self.y[i as usize] - mean).powi(2))
            .sum();
        if sse <= 0.0 {
            return id;
        }
        let candidates = sample_subset(&self.level_sets[depth], self.spec.colsample_by_node, self.rng);
        let Some(best) = self.best_split(lo, hi, mean, sse * 1e-12, &candidates) else {
            return id;
        };
        let values = &self.cols[best.pos];
        let mut n_left = 0;
        for &i in &self.order[0][lo..hi] {
            let left = values[i as usize] <= best.threshold;
            self.goes_left[i as usize] = left;
            n_left += left as usize;
        }
        for list in &mut self.order {
            self.scratch.clear();
            self.scratch.extend(list[lo..hi].iter().filter(|&&i| self.goes_left[i as usize]));
            self.scratch.extend(list[lo..hi].iter().filter(|&&i| !self.goes_left[i as usize]));
            list[lo..hi].copy_from_slice(&self.scratch);
        }
        let left = self.build(lo, lo + n_left, depth + 1);
        let right = self.build(lo + n_left, hi, depth + 1);
        self.nodes[id] = Node::Split {
            feature: self.features[best.pos],
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Highest squared-error reduction; candidates are scanned in ascending
    /// feature then threshold order and only strictly larger gains replace.
    fn best_split(&mut self, lo: usize, hi: usize, mean: f64, min_gain: f64, candidates: &[usize]) -> Option<Candidate> {
        let n = hi - lo;
        let min_leaf = self.spec.min_samples_leaf;
        let mut best: Option<Candidate> = None;
        let mut offer = |gain: f64, pos: usize, threshold: f64| {
            let better = gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain * (1.0 + 1e-12));
            if better {
                best = Some(Candidate { gain, pos, threshold });
            }
        };
        let gain_of = |sl: f64, nl: usize| sl * sl * n as f64 / (nl * (n - nl)) as f64;
        for &pos in candidates {
            let ord = &self.order[pos][lo..hi];
            let values = &self.cols[pos];
            match self.mode {
                SplitMode::Exhaustive => {
                    let mut sl = 0.0;
                    for k in 0..n - 1 {
                        let i = ord[k] as usize;
                        sl += self.y[i] - mean;
                        let nl = k + 1;
                        let (v, next) = (values[i], values[ord[k + 1] as usize]);
                        if next > v && nl >= min_leaf && n - nl >= min_leaf {
                            let mut mid = v + (next - v) / 2.0;
                            if mid >= next {
                                mid = v;
                            }
                            offer(gain_of(sl, nl), pos, mid);
                        }
                    }
                }
                SplitMode::RandomThreshold => {
                    let (vmin, vmax) = (values[ord[0] as usize], values[ord[n - 1] as usize]);
                    if vmax <= vmin {
                        continue;
                    }
                    let threshold = self.rng.random_range(vmin..vmax);
                    let nl = ord.partition_point(|&i| values[i as usize] <= threshold);
                    if nl < min_leaf || n - nl < min_leaf {
                        continue;
                    }
                    let sl: f64 = ord[..nl].iter().map(|&i| self.y[i as usize] - mean).sum();
                    offer(gain_of(sl, nl), pos, threshold);
                }
            }
        }
        best
    }
}

/// Row indices of `x` sorted by each column.
pub struct Presorted(Vec<Vec<u32>>);

impl Presorted {
    pub fn new(x: &Matrix) -> Self {
        Presorted(
            (0..x.n_cols())
                .map(|f| {
                    let col = x.column(f);
                    let mut o: Vec<u32> = (0..x.n_rows() as u32).collect();
                    o.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                    o
                })
                .collect(),
        )
    }
}

/// Fits one tree on the listed rows of `x` (repeats allowed).
pub fn fit_tree_on<R: Rng>(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    spec: &TreeSpec,
    mode: SplitMode,
    rng: &mut R,
) -> Tree {
    fit_tree_presorted(x, &Presorted::new(x), y, rows, spec, mode, rng)
}

fn fit_tree_presorted<R: Rng>(
    x: &Matrix,
    presorted: &Presorted,
    y: &[f64],
    rows: &[usize],
    spec: &TreeSpec,
    mode: SplitMode,
    rng: &mut R,
) -> Tree {
    if rows.is_empty() {
        return Tree::leaf(0.0);
    }
    let all: Vec<usize> = (0..x.n_cols()).collect();
    let features = sample_subset(&all, spec.colsample_by_tree, rng);
    let positions: Vec<usize> = (0..features.len()).collect();
    let level_sets = (0..spec.max_depth)
        .map(|_| sample_subset(&positions, spec.colsample_by_level, rng))
        .collect();
    let mut local_rows = rows.to_vec();
    local_rows.sort_unstable();
    let m = local_rows.len();
    let mut first = vec![0u32; x.n_rows()];
    let mut count = vec![0u32; x.n_rows()];
    for (i, &r) in local_rows.iter().enumerate() {
        if count[r] == 0 {
            first[r] = i as u32;
        }
        count[r] += 1;
    }
    let cols: Vec<Vec<f64>> = features
        .iter()
        .map(|&f| local_rows.iter().map(|&r| x.get(r, f)).collect())
        .collect();
    let order: Vec<Vec<u32>> = features
        .iter()
        .map(|&f| {
            let mut o = Vec::with_capacity(m);
            for &r in &presorted.0[f] {
                let r = r as usize;
                o.extend(first[r]..first[r] + count[r]);
            }
            o
        })
        .collect();
    // a tree with no features still needs one order list to enumerate rows
    let order = if order.is_empty() { vec![(0..m as u32).collect()] } else { order };
    let mut b = Builder {
        spec,
        mode,
        features,
        cols,
        y: local_rows.iter().map(|&r| y[r]).collect(),
        order,
        level_sets,
        goes_left: vec![false; m],
        scratch: Vec::with_capacity(m),
        nodes: Vec::new(),
        rng,
    };
    b.build(0, m, 0);
    Tree { nodes: b.nodes }
}

/// Fits one tree on every row.
pub fn fit_tree<R: Rng>(x: &Matrix, y: &[f64], spec: &TreeSpec, rng: &mut R) -> Result<Tree> {
    check_xy(x, y)?;
    spec.validate()?;
    let rows: Vec<usize> = (0..y.len()).collect();
    Ok(fit_tree_on(x, y, &rows, spec, spec.split_mode, rng))
}

fn check_xy(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::Shape {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    if y.iter().chain(x.as_slice()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("training data must be finite".into()));
    }
    Ok(())
}

fn tree_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEnsemble {
    pub format: String,
    pub spec: EnsembleSpec,
    pub n_features: usize,
    pub base_prediction: f64,
    pub trees: Vec<Tree>,
}

pub fn fit(x: &Matrix, y: &[f64], spec: &EnsembleSpec) -> Result<FittedEnsemble> {
    check_xy(x, y)?;
    spec.validate()?;
    let n = y.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let base = crate::stats::mean(y);
    let mode = spec.split_mode();
    let presorted = Presorted::new(x);
    let trees = match spec.method {
        Method::GB => {
            let mut row_rng = tree_rng(spec.seed, 0);
            let mut fitted = vec![base; n];
            let all: Vec<usize> = (0..n).collect();
            let mut rows = all.clone();
            let mut trees = Vec::with_capacity(spec.n_estimators);
            for m in 0..spec.n_estimators {
                let redraw = spec.subsample_freq == 0 || m % spec.subsample_freq == 0;
                if spec.subsample < 1.0 && redraw {
                    rows = sample_subset(&all, spec.subsample, &mut row_rng);
                }
                let residual: Vec<f64> = y.iter().zip(&fitted).map(|(a, f)| a - f).collect();
                let mut rng = tree_rng(spec.seed, m as u64 + 1);
                let tree = fit_tree_presorted(x, &presorted, &residual, &rows, &spec.tree, mode, &mut rng);
                for (i, f) in fitted.iter_mut().enumerate() {
                    *f += spec.learning_rate * tree.predict_row(x.row(i));
                }
                trees.push(tree);
            }
            trees
        }
        Method::RF | Method::ETR => (0..spec.n_estimators)
            .into_par_iter()
            .map(|m| {
                let mut rng = tree_rng(spec.seed, m as u64 + 1);
                let rows: Vec<usize> = if spec.method == Method::RF && spec.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                fit_tree_presorted(x, &presorted, y, &rows, &spec.tree, mode, &mut rng)
            })
            .collect(),
    };
    Ok(FittedEnsemble {
        format: MODEL_FORMAT.to_string(),
        spec: spec.clone(),
        n_features: x.n_cols(),
        base_prediction: base,
        trees,
    })
}

impl FittedEnsemble {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.spec.method {
            Method::GB => {
                self.base_prediction
                    + self.spec.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
            }
            _ if self.trees.is_empty() => self.base_prediction,
            _ => self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64,
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                got: x.n_cols(),
            });
        }
        Ok(x.rows().map(|r| self.predict_row(r)).collect())
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format != MODEL_FORMAT {
            return Err(Error::InvalidSpec(format!("unknown model format {}", model.format)));
        }
        Ok(model)
    }
}

/// What the per-step models learn: the target level itself, or its change
/// from the last observed target value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    #[default]
    Level,
    Increment,
}

/// One ensemble per horizon step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameModel {
    pub steps: Vec<FittedEnsemble>,
    pub target_mode: TargetMode,
}

pub fn fit_frame(frame: &SupervisedFrame, spec: &EnsembleSpec, mode: TargetMode) -> Result<FrameModel> {
    let steps = (0..frame.horizon)
        .map(|h| {
            let mut y = frame.target_column(h);
            if mode == TargetMode::Increment {
                for (v, last) in y.iter_mut().zip(&frame.last_observed) {
                    *v -= last;
                }
            }
            fit(&frame.x, &y, spec)
        })
        .collect::<Result<_>>()?;
    Ok(FrameModel {
        steps,
        target_mode: mode,
    })
}

impl FrameModel {
    /// `rows x horizon` predictions for the rows of `frame`.
    pub fn predict(&self, frame: &SupervisedFrame) -> Result<Matrix> {
        let per_step: Vec<Vec<f64>> = self.steps.iter().map(|m| m.predict(&frame.x)).collect::<Result<_>>()?;
        let rows = frame.n_rows();
        let mut data = Vec::with_capacity(rows * per_step.len());
        for r in 0..rows {
            let anchor = match self.target_mode {
                TargetMode::Level => 0.0,
                TargetMode::Increment => frame.last_observed[r],
            };
            data.extend(per_step.iter().map(|p| p[r] + anchor));
        }
        Matrix::new(rows, per_step.len(), data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub name: String,
    pub spec: EnsembleSpec,
    pub fold_mae: Vec<f64>,
    pub mean_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: EnsembleSpec,
    pub table: Vec<CvRow>,
}

fn mae_matrix(truth: &Matrix, pred: &Matrix) -> f64 {
    let n = truth.as_slice().len();
    truth
        .as_slice()
        .iter()
        .zip(pred.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n as f64
}

/// Mean validation MAE of every spec over expanding time-series folds.
pub fn grid_search(
    frame: &SupervisedFrame,
    grid: &[EnsembleSpec],
    folds: usize,
    mode: TargetMode,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::InvalidSpec("empty model grid".into()));
    }
    let splits = ts_cv_folds(frame.n_rows(), folds)?;
    let table: Vec<CvRow> = grid
        .par_iter()
        .map(|spec| {
            let fold_mae = splits
                .iter()
                .map(|(train, valid)| {
                    let model = fit_frame(&frame.take(train), spec, mode)?;
                    let valid = frame.take(valid);
                    Ok(mae_matrix(&valid.y, &model.predict(&valid)?))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(CvRow {
                name: spec.name(),
                spec: spec.clone(),
                mean_mae: crate::stats::mean(&fold_mae),
                fold_mae,
            })
        })
        .collect::<Result<_>>()?;
    let best = table
        .iter()
        .min_by(|a, b| {
            a.mean_mae
                .total_cmp(&b.mean_mae)
                .then(a.spec.n_estimators.cmp(&b.spec.n_estimators))
                .then(a.spec.tree.max_depth.cmp(&b.spec.tree.max_depth))
        })
        .map(|row| row.spec.clone())
        .expect("non-empty grid");
    Ok(GridResult { best, table })
}

/// Boosted-tree grid with column sampling used for the component models.
pub fn component_grid(seed: u64) -> Vec<EnsembleSpec> {
    let mut grid = Vec::new();
    for n in [100, 250] {
        for depth in [2, 3] {
            let mut spec = EnsembleSpec::gb(n, depth).with_seed(seed).with_label("XGB");
            spec.tree.colsample_by_level = 0.8;
            spec.tree.colsample_by_node = 0.8;
            spec.tree.colsample_by_tree = 0.8;
            grid.push(spec);
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImfPredictorConfig {
    pub past: usize,
    pub split: SplitSpec,
    pub base_channels: Vec<String>,
    pub target_mode: TargetMode,
}

impl Default for ImfPredictorConfig {
    fn default() -> Self {
        Self {
            past: 7,
            split: SplitSpec::default(),
            base_channels: crate::reframe::BASE_CHANNELS.iter().map(|s| s.to_string()).collect(),
            target_mode: TargetMode::Increment,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImfPredictors {
    /// Input series plus `imf_k_pred` and `residue_pred` channels.
    pub series: DailySeries,
    /// Tuned spec per component, in component order.
    pub selected: Vec<(String, EnsembleSpec)>,
    /// First series index belonging to the test split.
    pub test_start: usize,
}

/// Forecast channels for every component of `d`. Each component model is
/// tuned and fit on the training split only. Training dates carry
/// within-train cross-validated forecasts (persistence before the first
/// validation block), test dates carry forecasts of a model fit on the whole
/// training split, and dates before the first full window carry persistence.
pub fn fit_imf_predictors(
    series: &DailySeries,
    d: &Decomposition,
    grid: &[EnsembleSpec],
    cfg: &ImfPredictorConfig,
) -> Result<ImfPredictors> {
    let n = series.len();
    if d.source_len != n {
        return Err(Error::Shape {
            expected: n,
            got: d.source_len,
        });
    }
    cfg.split.validate()?;
    let base: Vec<&str> = cfg.base_channels.iter().map(String::as_str).collect();
    let mut out = series.clone();
    let mut selected = Vec::new();
    let mut test_start = n;
    for (name, values) in d.component_names().into_iter().zip(d.components()) {
        let work = series.clone().with_channel(name.clone(), values.to_vec())?;
        let fs = PredictorSet::Imfs.frame_spec_with(&base, &name, 0, cfg.past, 1);
        let frame = make_frame(&work, &fs)?;
        let cut = cfg.split.train_rows(frame.n_rows());
        let train = frame.slice(0..cut);
        let best = grid_search(&train, grid, cfg.split.folds, cfg.target_mode)?.best;

        let mut pred = vec![f64::NAN; n];
        pred[0] = values[0];
        for t in 1..cfg.past {
            pred[t] = values[t - 1];
        }
        let folds = ts_cv_folds(cut, cfg.split.folds)?;
        let first_valid = folds[0].1[0];
        for r in 0..first_valid {
            pred[r + cfg.past] = frame.last_observed[r];
        }
        for (tr, va) in &folds {
            let model = fit_frame(&train.take(tr), &best, cfg.target_mode)?;
            let p = model.predict(&train.take(va))?;
            for (k, &r) in va.iter().enumerate() {
                pred[r + cfg.past] = p.get(k, 0);
            }
        }
        let model = fit_frame(&train, &best, cfg.target_mode)?;
        let p = model.predict(&frame.slice(cut..frame.n_rows()))?;
        for k in 0..p.n_rows() {
            pred[cut + k + cfg.past] = p.get(k, 0);
        }
        test_start = cut + cfg.past;
        out.insert_channel(format!("{name}_pred"), pred)?;
        selected.push((name, best));
    }
    Ok(ImfPredictors {
        series: out,
        selected,
        test_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::Rng;

    fn col(values: &[f64]) -> Matrix {
        Matrix::column_vector(values)
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn sse_of(y: &[f64]) -> f64 {
        let m = crate::stats::mean(y);
        y.iter().map(|v| (v - m).powi(2)).sum()
    }

    #[test]
    fn constant_target_is_a_single_leaf() {
        let t = fit_tree(&col(&[1.0, 2.0, 3.0]), &[4.0; 3], &TreeSpec::with_depth(3), &mut rng()).unwrap();
        assert_eq!(t.nodes, vec![Node::Leaf { value: 4.0 }]);
        assert_eq!(t.depth(), 0);
    }

    #[test]
    fn stump_on_step() {
        let t = fit_tree(&col(&[1.0, 2.0, 3.0, 4.0]), &[0.0, 0.0, 10.0, 10.0], &TreeSpec::with_depth(1), &mut rng())
            .unwrap();
        assert_eq!(
            t.nodes,
            vec![
                Node::Split { feature: 0, threshold: 2.5, left: 1, right: 2 },
                Node::Leaf { value: 0.0 },
                Node::Leaf { value: 10.0 },
            ]
        );
    }

    #[test]
    fn xor_is_inseparable_at_depth_one() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let y = [0.0, 1.0, 1.0, 0.0];
        let t = fit_tree(&x, &y, &TreeSpec::with_depth(1), &mut rng()).unwrap();
        let mse: f64 = (0..4).map(|i| (t.predict_row(x.row(i)) - y[i]).powi(2)).sum::<f64>() / 4.0;
        assert!(mse > 0.0);
    }

    #[test]
    fn tie_prefers_lowest_feature() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0], vec![4.0, 4.0]]).unwrap();
        let t = fit_tree(&x, &[0.0, 0.0, 1.0, 1.0], &TreeSpec::with_depth(1), &mut rng()).unwrap();
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn min_samples_leaf_is_respected() {
        let x = col(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = [0.0, 0.0, 0.0, 0.0, 0.0, 100.0];
        let spec = TreeSpec {
            min_samples_leaf: 2,
            ..TreeSpec::with_depth(1)
        };
        let t = fit_tree(&x, &y, &spec, &mut rng()).unwrap();
        assert!(matches!(t.nodes[0], Node::Split { threshold, .. } if threshold == 4.5));
    }

    #[test]
    fn single_deep_gb_tree_interpolates() {
        let x = col(&[0.3, 1.2, 2.0, 3.7, 4.1]);
        let y = [5.0, -1.0, 2.5, 9.0, 0.0];
        let spec = EnsembleSpec {
            n_estimators: 1,
            learning_rate: 1.0,
            ..EnsembleSpec::gb(1, 10)
        };
        let m = fit(&x, &y, &spec).unwrap();
        for (p, t) in m.predict(&x).unwrap().iter().zip(&y) {
            assert!((p - t).abs() < 1e-12);
        }
    }

    #[test]
    fn two_stump_residual_trace() {
        let spec = EnsembleSpec {
            learning_rate: 0.5,
            ..EnsembleSpec::gb(2, 1)
        };
        let m = fit(&col(&[0.0, 1.0]), &[0.0, 10.0], &spec).unwrap();
        let p = m.predict(&col(&[0.0, 1.0])).unwrap();
        assert!((p[0] - 1.25).abs() < 1e-12 && (p[1] - 8.75).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn single_unbootstrapped_forest_is_one_tree() {
        let x = Matrix::from_rows(&(0..12).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = (0..12).map(|i| ((i * 3) % 7) as f64).collect();
        let spec = EnsembleSpec {
            bootstrap: false,
            ..EnsembleSpec::rf(1, 3)
        };
        let m = fit(&x, &y, &spec).unwrap();
        let t = fit_tree(&x, &y, &TreeSpec::with_depth(3), &mut rng()).unwrap();
        assert_eq!(m.trees[0], t);
        assert_eq!(m.predict(&x).unwrap(), x.rows().map(|r| t.predict_row(r)).collect::<Vec<_>>());
    }

    #[test]
    fn base_only_ensemble_predicts_base() {
        for method in [Method::GB, Method::RF] {
            let m = FittedEnsemble {
                format: MODEL_FORMAT.into(),
                spec: EnsembleSpec { method, ..EnsembleSpec::default() },
                n_features: 1,
                base_prediction: 3.5,
                trees: vec![],
            };
            assert_eq!(m.predict(&col(&[1.0, 9.0])).unwrap(), vec![3.5, 3.5]);
        }
    }

    #[test]
    fn column_mismatch_is_a_shape_error() {
        let m = fit(&col(&[1.0, 2.0, 3.0]), &[1.0, 2.0, 3.0], &EnsembleSpec::gb(3, 1)).unwrap();
        let x2 = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(m.predict(&x2), Err(Error::Shape { expected: 1, got: 2 })));
        assert!(matches!(fit(&Matrix::default(), &[], &EnsembleSpec::gb(1, 1)), Err(Error::EmptyInput)));
    }

    #[test]
    fn json_round_trip() {
        let x = Matrix::from_rows(&(0..20).map(|i| vec![i as f64, (i % 3) as f64]).collect::<Vec<_>>()).unwrap();
        let y: Vec<f64> = (0..20).map(|i| (i as f64).sqrt()).collect();
        for spec in [EnsembleSpec::gb(5, 2), EnsembleSpec::rf(4, 3), EnsembleSpec::etr(4, 3)] {
            let m = fit(&x, &y, &spec).unwrap();
            let back = FittedEnsemble::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        }
        assert!(FittedEnsemble::from_json(r#"{"format":"other","spec":{},"n_features":1,"base_prediction":0,"trees":[]}"#).is_err());
    }

    #[test]
    fn gb_row_is_expressible() {
        let text = r#"{"method":"gb","n_estimators":1000,"subsample":0.8,"tree":{"max_depth":4}}"#;
        let spec: EnsembleSpec = serde_json::from_str(text).unwrap();
        assert_eq!((spec.n_estimators, spec.tree.max_depth, spec.subsample), (1000, 4, 0.8));
        spec.validate().unwrap();
        let back: EnsembleSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = EnsembleSpec::gb(1, 1);
        s.tree.colsample_by_node = 0.0;
        assert!(s.validate().is_err());
        s.tree.colsample_by_node = 1.5;
        assert!(s.validate().is_err());
        assert!(EnsembleSpec::gb(0, 1).validate().is_err());
        assert!(EnsembleSpec::gb(1, 0).validate().is_err());
    }

    #[test]
    fn every_tree_respects_depth_and_count() {
        let x = Matrix::from_rows(&(0..60).map(|i| vec![i as f64, ((i * 13) % 17) as f64, (i % 4) as f64]).collect::<Vec<_>>())
            .unwrap();
        let y: Vec<f64> = (0..60).map(|i| ((i * 31) % 23) as f64).collect();
        let mut specs = vec![EnsembleSpec::gb(20, 3), EnsembleSpec::rf(20, 4), EnsembleSpec::etr(20, 2)];
        let mut lgb = EnsembleSpec::gb(20, 5);
        lgb.subsample = 0.8;
        lgb.subsample_freq = 5;
        lgb.tree.colsample_by_tree = 0.5;
        lgb.tree.colsample_by_level = 0.5;
        lgb.tree.colsample_by_node = 0.5;
        specs.push(lgb);
        for spec in specs {
            let m = fit(&x, &y, &spec).unwrap();
            assert_eq!(m.trees.len(), spec.n_estimators);
            assert!(m.max_depth() <= spec.tree.max_depth);
        }
    }

    #[test]
    fn column_sampling_restricts_features() {
        let x = Matrix::from_rows(&(0..30).map(|i| vec![i as f64, -(i as f64), (i * i) as f64, 1.0]).collect::<Vec<_>>())
            .unwrap();
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let spec = TreeSpec {
            colsample_by_tree: 0.25,
            ..TreeSpec::with_depth(4)
        };
        for seed in 0..10 {
            let t = fit_tree(&x, &y, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let used: std::collections::BTreeSet<usize> = t
                .nodes
                .iter()
                .filter_map(|n| match n {
                    Node::Split { feature, .. } => Some(*feature),
                    _ => None,
                })
                .collect();
            assert!(used.len() <= 1);
        }
    }

    #[test]
    fn grid_picks_interpolating_spec() {
        let n = 60;
        let mut s = DailySeries::new(NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(), n);
        let a: Vec<f64> = (0..n).map(|i| (i % 5) as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { 10.0 * ((i - 1) % 5) as f64 }).collect();
        s.insert_channel("a", a).unwrap();
        s.insert_channel("y", y).unwrap();
        let frame = make_frame(&s, &crate::reframe::FrameSpec::new(&["a"], "y", 1, 1)).unwrap();
        let shallow = EnsembleSpec { learning_rate: 1.0, ..EnsembleSpec::gb(1, 1) };
        let deep = EnsembleSpec { learning_rate: 1.0, ..EnsembleSpec::gb(1, 4) };
        let r = grid_search(&frame, &[shallow, deep.clone()], 4, TargetMode::Level).unwrap();
        assert_eq!(r.best, deep);
        assert!(r.table[1].mean_mae < 1e-12);
        let one = grid_search(&frame, &[EnsembleSpec::gb(3, 2)], 4, TargetMode::Level).unwrap();
        assert_eq!(one.best, EnsembleSpec::gb(3, 2));
        assert!(grid_search(&frame, &[], 4, TargetMode::Level).is_err());
    }

    #[test]
    fn grid_ties_favour_smaller_models() {
        let n = 40;
        let s = DailySeries::new(NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(), n)
            .with_channel("a", (0..n).map(|i| i as f64).collect())
            .unwrap()
            .with_channel("y", vec![2.0; n])
            .unwrap();
        let frame = make_frame(&s, &crate::reframe::FrameSpec::new(&["a"], "y", 1, 1)).unwrap();
        let grid = [EnsembleSpec::gb(5, 3), EnsembleSpec::gb(2, 3), EnsembleSpec::gb(2, 1)];
        let r = grid_search(&frame, &grid, 3, TargetMode::Level).unwrap();
        assert_eq!(r.best, EnsembleSpec::gb(2, 1));
    }

    fn linear_residue_fixture(n: usize) -> (DailySeries, Decomposition) {
        let residue: Vec<f64> = (0..n).map(|t| 100.0 - 0.01 * t as f64).collect();
        let imf: Vec<f64> = (0..n).map(|t| (t as f64 * 0.9).sin()).collect();
        let s = DailySeries::new(NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(), n)
            .with_channel("day_index", (0..n).map(|t| t as f64).collect())
            .unwrap();
        let d = Decomposition {
            imfs: vec![imf],
            residue,
            source_len: n,
            spec: crate::emd::DecomposeSpec::plain(),
        };
        (s, d)
    }

    fn small_cfg() -> ImfPredictorConfig {
        ImfPredictorConfig {
            past: 3,
            split: SplitSpec { train_fraction: 0.7, folds: 4 },
            base_channels: vec!["day_index".into()],
            target_mode: TargetMode::Increment,
        }
    }

    #[test]
    fn linear_residue_forecast() {
        let n = 120;
        let (s, d) = linear_residue_fixture(n);
        let grid = [EnsembleSpec::gb(50, 2)];
        let out = fit_imf_predictors(&s, &d, &grid, &small_cfg()).unwrap();
        let pred = out.series.channel("residue_pred").unwrap();
        let range = d.residue[0] - d.residue[n - 1];
        let mae: f64 = (out.test_start..n).map(|t| (pred[t] - d.residue[t]).abs()).sum::<f64>() / (n - out.test_start) as f64;
        assert!(mae < 1e-2 * range, "mae {mae}");
        let names: Vec<&str> = out.series.channel_names().collect();
        assert_eq!(names.len(), s.channel_names().count() + d.n_imfs() + 1);
        assert!(out.series.is_complete());
    }

    #[test]
    fn component_forecasts_ignore_future_targets() {
        let n = 120;
        let (s, d) = linear_residue_fixture(n);
        let grid = [EnsembleSpec::gb(20, 2)];
        let cfg = small_cfg();
        let a = fit_imf_predictors(&s, &d, &grid, &cfg).unwrap();
        let mut corrupt = d.clone();
        for t in a.test_start..n {
            corrupt.imfs[0][t] += 50.0;
            corrupt.residue[t] *= 3.0;
        }
        let b = fit_imf_predictors(&s, &corrupt, &grid, &cfg).unwrap();
        for name in ["imf_1_pred", "residue_pred"] {
            assert_eq!(
                &a.series.channel(name).unwrap()[..a.test_start],
                &b.series.channel(name).unwrap()[..a.test_start]
            );
        }
        let wrong = DailySeries::new(NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(), n - 1);
        assert!(matches!(fit_imf_predictors(&wrong, &d, &grid, &cfg), Err(Error::Shape { .. })));
    }

    fn brute_force_stump(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
        let mut uniq = x.to_vec();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        let total = sse_of(y);
        let mut best: Option<(f64, f64)> = None;
        for w in uniq.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let l: Vec<f64> = x.iter().zip(y).filter(|(xi, _)| **xi <= thr).map(|(_, v)| *v).collect();
            let r: Vec<f64> = x.iter().zip(y).filter(|(xi, _)| **xi > thr).map(|(_, v)| *v).collect();
            let sse = sse_of(&l) + sse_of(&r);
            if sse < total * (1.0 - 1e-12) && best.is_none_or(|(b, _)| sse < b - 1e-9) {
                best = Some((sse, thr));
            }
        }
        best
    }

    proptest! {
        #[test]
        fn stump_matches_brute_force(
            pts in prop::collection::vec((0u8..6, -50.0f64..50.0), 2..=8)
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let t = fit_tree(&col(&x), &y, &TreeSpec::with_depth(1), &mut rng()).unwrap();
            match (brute_force_stump(&x, &y), &t.nodes[0]) {
                (None, Node::Leaf { .. }) => {}
                (Some((sse, thr)), Node::Split { threshold, .. }) => {
                    prop_assert!((thr - threshold).abs() < 1e-12);
                    let fitted: f64 = x.iter().zip(&y).map(|(xi, yi)| (t.predict_row(&[*xi]) - yi).powi(2)).sum();
                    prop_assert!((fitted - sse).abs() < 1e-9 * (1.0 + sse));
                }
                (b, n) => prop_assert!(false, "oracle {:?} vs tree {:?}", b, n),
            }
        }

        #[test]
        fn row_permutation_permutes_predictions(seed in 0u64..1000) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..25).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
            let y: Vec<f64> = rows.iter().map(|v| v[0] * 3.0 - v[1]).collect();
            let m = fit(&Matrix::from_rows(&rows).unwrap(), &y, &EnsembleSpec::gb(10, 2)).unwrap();
            let mut perm: Vec<usize> = (0..25).collect();
            perm.reverse();
            perm.rotate_left((seed % 25) as usize);
            let x = Matrix::from_rows(&rows).unwrap();
            let p = m.predict(&x).unwrap();
            let pp = m.predict(&x.select_rows(&perm)).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(pp[k], p[i]);
            }
        }

        #[test]
        fn feature_permutation_invariance(seed in 0u64..200) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| r.random::<f64>()).collect()).collect();
            let y: Vec<f64> = rows.iter().map(|v| v[0] - 2.0 * v[2] + v[1] * v[0]).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let perm = [2usize, 0, 1];
            let xp = x.select_cols(&perm);
            let a = fit(&x, &y, &EnsembleSpec::gb(15, 2)).unwrap().predict(&x).unwrap();
            let b = fit(&xp, &y, &EnsembleSpec::gb(15, 2)).unwrap().predict(&xp).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
