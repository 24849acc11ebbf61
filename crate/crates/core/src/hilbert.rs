//! Analytic signal and instantaneous amplitude, phase and frequency.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::emd::Decomposition;
use crate::error::{Error, Result};

pub const MIN_ANALYTIC_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSignal {
    pub real_part: Vec<f64>,
    pub imag_part: Vec<f64>,
    pub amplitude: Vec<f64>,
    /// Unwrapped phase, radians.
    pub phase: Vec<f64>,
    /// Cycles per timestep.
    pub inst_freq: Vec<f64>,
}

/// Frequency-domain analytic signal: forward transform, zero the negative
/// frequencies, double the positive ones (DC and Nyquist unchanged), inverse
/// transform. The transform runs at the input's own length.
pub fn analytic_signal(x: &[f64]) -> Result<AnalyticSignal> {
    let n = x.len();
    if n < MIN_ANALYTIC_LEN {
        return Err(Error::InsufficientData {
            needed: MIN_ANALYTIC_LEN,
            got: n,
        });
    }
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    // Bins 1..=last_positive are doubled; for even n the Nyquist bin n/2 is kept.
    let last_positive = (n - 1) / 2;
    for (k, c) in buf.iter_mut().enumerate().skip(1) {
        if k <= last_positive {
            *c *= 2.0;
        } else if !(n % 2 == 0 && k == n / 2) {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let real_part: Vec<f64> = buf.iter().map(|c| c.re * scale).collect();
    let imag_part: Vec<f64> = buf.iter().map(|c| c.im * scale).collect();
    let amplitude = real_part
        .iter()
        .zip(&imag_part)
        .map(|(r, i)| r.hypot(*i))
        .collect();
    let phase = unwrap_phase(
        &real_part
            .iter()
            .zip(&imag_part)
            .map(|(r, i)| i.atan2(*r))
            .collect::<Vec<_>>(),
    );
    let inst_freq = phase_derivative(&phase);
    Ok(AnalyticSignal {
        real_part,
        imag_part,
        amplitude,
        phase,
        inst_freq,
    })
}

/// Removes 2-pi jumps so successive phases differ by less than pi.
pub fn unwrap_phase(wrapped: &[f64]) -> Vec<f64> {
    use std::f64::consts::{PI, TAU};
    let mut out = Vec::with_capacity(wrapped.len());
    let mut offset = 0.0;
    for (i, &p) in wrapped.iter().enumerate() {
        if i > 0 {
            let d = p - wrapped[i - 1];
            if d > PI {
                offset -= TAU * ((d + PI) / TAU).floor();
            } else if d < -PI {
                offset += TAU * ((-d + PI) / TAU).floor();
            }
        }
        out.push(p + offset);
    }
    out
}

/// Phase derivative in cycles per step: central differences inside,
/// one-sided at the two ends.
fn phase_derivative(phase: &[f64]) -> Vec<f64> {
    use std::f64::consts::TAU;
    let n = phase.len();
    (0..n)
        .map(|t| match t {
            0 => (phase[1] - phase[0]) / TAU,
            t if t == n - 1 => (phase[t] - phase[t - 1]) / TAU,
            t => (phase[t + 1] - phase[t - 1]) / (2.0 * TAU),
        })
        .collect()
}

/// Which component of a decomposition feeds the frequency predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencySource {
    /// IMF with the largest mean instantaneous amplitude.
    #[default]
    DominantImf,
    FirstImf,
    /// Amplitude-weighted mean of the per-IMF frequencies at each step.
    AmplitudeWeighted,
}

/// Instantaneous frequency of the selected component, unlagged.
pub fn component_inst_freq(d: &Decomposition, source: FrequencySource) -> Result<Vec<f64>> {
    if d.imfs.is_empty() {
        return Err(Error::NoOscillatoryComponent);
    }
    let analytic: Vec<AnalyticSignal> = d
        .imfs
        .iter()
        .map(|imf| analytic_signal(imf))
        .collect::<Result<_>>()?;
    Ok(match source {
        FrequencySource::FirstImf => analytic[0].inst_freq.clone(),
        FrequencySource::DominantImf => {
            let mean_amp = |a: &AnalyticSignal| crate::stats::mean(&a.amplitude);
            let best = analytic
                .iter()
                .enumerate()
                .fold(0, |best, (k, a)| if mean_amp(a) > mean_amp(&analytic[best]) { k } else { best });
            analytic[best].inst_freq.clone()
        }
        FrequencySource::AmplitudeWeighted => (0..d.source_len)
            .map(|t| {
                let (mut num, mut den) = (0.0, 0.0);
                for a in &analytic {
                    num += a.amplitude[t] * a.inst_freq[t];
                    den += a.amplitude[t];
                }
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            })
            .collect(),
    })
}

/// One-step lagged instantaneous frequency: element `t` holds `f(t - 1)` and
/// the first element repeats the second.
pub fn soh_inst_freq(d: &Decomposition, source: FrequencySource) -> Result<Vec<f64>> {
    let f = component_inst_freq(d, source)?;
    let mut lagged = Vec::with_capacity(f.len());
    lagged.push(f[0]);
    lagged.extend_from_slice(&f[..f.len() - 1]);
    Ok(lagged)
}
