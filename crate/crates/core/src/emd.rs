//! Empirical mode decomposition.
//!
//! A signal is split into intrinsic mode functions (highest frequency first)
//! plus a residue that serves as the trend. [`decompose`] runs plain EMD when
//! the ensemble is disabled and the complete-ensemble, adaptive-noise variant
//! otherwise. Envelopes are natural cubic splines through the extrema, with
//! two extrema mirrored past each boundary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub const MIN_DECOMPOSE_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftConfig {
    pub max_sifts: usize,
    /// Threshold on the normalized squared change between sifts.
    pub stop_threshold: f64,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            max_sifts: 50,
            stop_threshold: 0.2,
        }
    }
}

/// Parameters of a (possibly noise-assisted) decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeSpec {
    /// Number of noisy realizations; values <= 1 select plain EMD.
    pub ensemble_size: usize,
    /// Noise standard deviation as a fraction of the signal's.
    pub noise_std: f64,
    pub sift: SiftConfig,
    pub max_imfs: Option<usize>,
    pub seed: u64,
}

impl Default for DecomposeSpec {
    fn default() -> Self {
        Self {
            ensemble_size: 100,
            noise_std: 0.2,
            sift: SiftConfig::default(),
            max_imfs: None,
            seed: 0,
        }
    }
}

impl DecomposeSpec {
    pub fn plain() -> Self {
        Self {
            ensemble_size: 1,
            noise_std: 0.0,
            ..Self::default()
        }
    }

    fn is_plain(&self) -> bool {
        self.ensemble_size <= 1 || self.noise_std == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub imfs: Vec<Vec<f64>>,
    pub residue: Vec<f64>,
    pub source_len: usize,
    pub spec: DecomposeSpec,
}

impl Decomposition {
    pub fn n_imfs(&self) -> usize {
        self.imfs.len()
    }

    /// Sum of all IMFs and the residue.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.residue.clone();
        for imf in &self.imfs {
            for (o, v) in out.iter_mut().zip(imf) {
                *o += v;
            }
        }
        out
    }

    /// Component names in storage order: `imf_1..imf_k`, then `residue`.
    pub fn component_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.imfs.len()).map(|k| format!("imf_{k}")).collect();
        names.push("residue".into());
        names
    }

    pub fn components(&self) -> impl Iterator<Item = &[f64]> {
        self.imfs
            .iter()
            .map(Vec::as_slice)
            .chain(std::iter::once(self.residue.as_slice()))
    }
}

/// Indices of local maxima and minima. Flat extrema report the middle of the
/// plateau; endpoints are never extrema.
pub fn find_extrema(x: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let (mut maxima, mut minima) = (Vec::new(), Vec::new());
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i] == x[i - 1] {
            i += 1;
            continue;
        }
        let rising = x[i] > x[i - 1];
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        if j + 1 < n {
            let mid = (i + j) / 2;
            if rising && x[j + 1] < x[i] {
                maxima.push(mid);
            } else if !rising && x[j + 1] > x[i] {
                minima.push(mid);
            }
        }
        i = j + 1;
    }
    (maxima, minima)
}

pub fn count_zero_crossings(x: &[f64]) -> usize {
    let mut prev = 0.0f64;
    let mut count = 0;
    for &v in x {
        if v == 0.0 {
            continue;
        }
        if prev != 0.0 && (v > 0.0) != (prev > 0.0) {
            count += 1;
        }
        prev = v;
    }
    count
}

/// Extrema and zero crossings differ by at most one.
pub fn is_imf(x: &[f64]) -> bool {
    let (maxima, minima) = find_extrema(x);
    let extrema = maxima.len() + minima.len();
    extrema.abs_diff(count_zero_crossings(x)) <= 1
}

/// Monotone, or too few extrema to hold another oscillation.
pub fn is_trend(x: &[f64]) -> bool {
    let (maxima, minima) = find_extrema(x);
    maxima.len() + minima.len() < 3
        || x.windows(2).all(|w| w[1] >= w[0])
        || x.windows(2).all(|w| w[1] <= w[0])
}

/// Natural cubic spline through `(xs, ys)`, evaluated at `0..n`.
fn natural_spline(xs: &[f64], ys: &[f64], n: usize) -> Vec<f64> {
    let m = xs.len();
    debug_assert!(m >= 2);
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    // Second derivatives; zero at both ends.
    let mut second = vec![0.0; m];
    if m > 2 {
        let k = m - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            upper[i] = h[i + 1];
            rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
        }
        // Thomas algorithm; sub-diagonal entry i is h[i] (i >= 1).
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut sol = vec![0.0; k];
        sol[k - 1] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i];
        }
        second[1..m - 1].copy_from_slice(&sol);
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for t in 0..n {
        let x = t as f64;
        while seg + 2 < m && x > xs[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (xs[seg], xs[seg + 1]);
        let hs = x1 - x0;
        let a = (x1 - x) / hs;
        let b = (x - x0) / hs;
        let v = a * ys[seg]
            + b * ys[seg + 1]
            + ((a * a * a - a) * second[seg] + (b * b * b - b) * second[seg + 1]) * hs * hs / 6.0;
        out.push(v);
    }
    out
}

const MIRRORED: usize = 2;

/// Spline envelope through the given extrema with mirrored boundary knots.
fn envelope(x: &[f64], extrema: &[usize]) -> Vec<f64> {
    let n = x.len();
    let last = (n - 1) as f64;
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(extrema.len() + 2 * MIRRORED);
    for &p in extrema.iter().take(MIRRORED).rev() {
        knots.push((-(p as f64), x[p]));
    }
    knots.extend(extrema.iter().map(|&p| (p as f64, x[p])));
    for &p in extrema.iter().rev().take(MIRRORED) {
        knots.push((2.0 * last - p as f64, x[p]));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = knots.into_iter().unzip();
    natural_spline(&xs, &ys, n)
}

/// Extracts one intrinsic mode function; returns `(imf, signal - imf)`.
pub fn sift(signal: &[f64], cfg: &SiftConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if signal.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: signal.len(),
        });
    }
    let mut h = signal.to_vec();
    for iteration in 0..cfg.max_sifts.max(1) {
        let (maxima, minima) = find_extrema(&h);
        if maxima.len() < 2 || minima.len() < 2 {
            if iteration == 0 {
                return Err(Error::NotDecomposable);
            }
            break;
        }
        let upper = envelope(&h, &maxima);
        let lower = envelope(&h, &minima);
        let mut change = 0.0;
        let mut energy = 0.0;
        for ((v, u), l) in h.iter_mut().zip(&upper).zip(&lower) {
            let mean = 0.5 * (u + l);
            change += mean * mean;
            energy += *v * *v;
            *v -= mean;
        }
        let sd = if energy > 0.0 { change / energy } else { 0.0 };
        if sd < cfg.stop_threshold && is_imf(&h) {
            break;
        }
    }
    let remainder = signal.iter().zip(&h).map(|(s, v)| s - v).collect();
    Ok((h, remainder))
}

fn imf_cap(n: usize, spec: &DecomposeSpec) -> usize {
    let bound = (n as f64).log2().ceil() as usize + 1;
    spec.max_imfs.map_or(bound, |m| m.min(bound))
}

/// Plain EMD: repeated sifting until the remainder is a trend.
fn emd(signal: &[f64], cfg: &SiftConfig, cap: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut residue = signal.to_vec();
    let mut imfs = Vec::new();
    while imfs.len() < cap && !is_trend(&residue) {
        match sift(&residue, cfg) {
            Ok((imf, rest)) => {
                imfs.push(imf);
                residue = rest;
            }
            Err(_) => break,
        }
    }
    (imfs, residue)
}

/// First mode of `x`, or zeros when `x` has no oscillation left.
fn first_mode(x: &[f64], cfg: &SiftConfig) -> Vec<f64> {
    match sift(x, cfg) {
        Ok((imf, _)) => imf,
        Err(_) => vec![0.0; x.len()],
    }
}

pub fn decompose(signal: &[f64], spec: &DecomposeSpec) -> Result<Decomposition> {
    let n = signal.len();
    if n < MIN_DECOMPOSE_LEN {
        return Err(Error::InsufficientData {
            needed: MIN_DECOMPOSE_LEN,
            got: n,
        });
    }
    let cap = imf_cap(n, spec);
    let (imfs, residue) = if spec.is_plain() {
        emd(signal, &spec.sift, cap)
    } else {
        ceemdan(signal, spec, cap)
    };
    Ok(Decomposition {
        imfs,
        residue,
        source_len: n,
        spec: spec.clone(),
    })
}

/// Complete ensemble EMD with adaptive noise. Noise realizations come in
/// `+w / -w` pairs; stage `k` perturbs the current residue with the k-th
/// mode of each realization (the raw noise at the first stage), scaled to
/// `noise_std * std(residue)`, and averages the first modes.
fn ceemdan(signal: &[f64], spec: &DecomposeSpec, cap: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = signal.len();
    let mut residue = signal.to_vec();
    let mut imfs = Vec::new();
    if stats::std(signal) == 0.0 {
        return (imfs, residue);
    }
    let pairs = (spec.ensemble_size / 2).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noises: Vec<Vec<f64>> = (0..pairs)
        .map(|_| {
            let w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let s = stats::std(&w);
            w.into_iter().map(|v| v / s).collect()
        })
        .collect();
    // Modes of each realization, normalized by the std of its first mode.
    let noise_modes: Vec<Vec<Vec<f64>>> = noises
        .par_iter()
        .map(|w| {
            let (mut modes, _) = emd(w, &spec.sift, cap);
            if let Some(first) = modes.first() {
                let s = stats::std(first);
                if s > 0.0 {
                    for m in modes.iter_mut() {
                        m.iter_mut().for_each(|v| *v /= s);
                    }
                }
            }
            modes
        })
        .collect();

    while imfs.len() < cap && !is_trend(&residue) {
        let stage = imfs.len();
        let beta = spec.noise_std * stats::std(&residue);
        let current = residue.as_slice();
        let members: Vec<Vec<f64>> = (0..pairs)
            .into_par_iter()
            .flat_map_iter(|i| {
                let noise: Option<&[f64]> = if stage == 0 {
                    Some(&noises[i])
                } else {
                    noise_modes[i].get(stage - 1).map(Vec::as_slice)
                };
                [1.0, -1.0].into_iter().map(move |sign| {
                    let perturbed: Vec<f64> = match noise {
                        Some(w) => current.iter().zip(w).map(|(r, v)| r + sign * beta * v).collect(),
                        None => current.to_vec(),
                    };
                    first_mode(&perturbed, &spec.sift)
                })
            })
            .collect();
        let mut imf = vec![0.0; n];
        for m in &members {
            for (a, v) in imf.iter_mut().zip(m) {
                *a += v;
            }
        }
        let count = members.len() as f64;
        imf.iter_mut().for_each(|v| *v /= count);
        if imf.iter().all(|v| *v == 0.0) {
            break;
        }
        for (r, v) in residue.iter_mut().zip(&imf) {
            *r -= v;
        }
        imfs.push(imf);
    }
    (imfs, residue)
}
