//! Cleaning and battery-domain feature extraction.
//!
//! Charging pulses are the atomic charging events: short intervals where the
//! state of charge rises. Daily capacity, state of health and equivalent
//! cycles are all derived from them.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{day_of, midnight, quartile_stats, DailySeries, RawTelemetry, SeriesStats};
use crate::series::{Reducer, SECONDS_PER_DAY};

/// Drops samples with non-finite values or a state of charge outside 0..=100.
pub fn clean_telemetry(raw: &RawTelemetry) -> RawTelemetry {
    let raw = raw.sorted_dedup();
    raw.retain_rows(|i| {
        raw.voltage[i].is_finite()
            && raw.current[i].is_finite()
            && raw.ambient_temp[i].is_finite()
            && (0.0..=100.0).contains(&raw.soc[i])
    })
}

/// Mean ambient temperature of a pack, used to screen packs against an
/// operating band.
pub fn mean_ambient(raw: &RawTelemetry) -> f64 {
    crate::stats::mean(&raw.ambient_temp)
}

pub fn ambient_within(raw: &RawTelemetry, band: (f64, f64)) -> bool {
    let m = mean_ambient(raw);
    m >= band.0 && m <= band.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierSummary {
    pub stats: SeriesStats,
    pub removed: usize,
    pub considered: usize,
}

impl OutlierSummary {
    pub fn fraction(&self) -> f64 {
        if self.considered == 0 {
            0.0
        } else {
            self.removed as f64 / self.considered as f64
        }
    }
}

/// Marks values outside the 1.5 x IQR fences of `channel` as missing.
pub fn remove_outliers(series: &DailySeries, channel: &str) -> Result<(DailySeries, OutlierSummary)> {
    let values = series.channel(channel)?;
    let stats = quartile_stats(values)?;
    let considered = values.iter().filter(|v| v.is_finite()).count();
    let mut out = series.clone();
    let mut removed = 0;
    for v in out.channel_mut(channel)?.iter_mut() {
        if v.is_finite() && !stats.contains(*v) {
            *v = f64::NAN;
            removed += 1;
        }
    }
    Ok((
        out,
        OutlierSummary {
            stats,
            removed,
            considered,
        },
    ))
}

/// Fills each interior run of missing values with the mean of the present
/// values that bracket it.
pub fn impute_gaps(series: &DailySeries, channel: &str) -> Result<DailySeries> {
    let mut out = series.clone();
    let values = out.channel_mut(channel)?;
    fill_interior(values).ok_or_else(|| Error::UnboundedGap {
        channel: channel.to_string(),
    })?;
    Ok(out)
}

/// In-place bracket-mean imputation; `None` if an endpoint is missing.
fn fill_interior(values: &mut [f64]) -> Option<()> {
    if values.is_empty() {
        return Some(());
    }
    if values[0].is_nan() || values[values.len() - 1].is_nan() {
        return None;
    }
    let mut i = 0;
    while i < values.len() {
        if values[i].is_nan() {
            let start = i;
            while values[i].is_nan() {
                i += 1;
            }
            let fill = 0.5 * (values[start - 1] + values[i]);
            values[start..i].fill(fill);
        }
        i += 1;
    }
    Some(())
}

/// Bracket-mean imputation for interior runs, nearest-value fill at the ends.
/// Leaves an all-missing channel untouched.
pub fn fill_gaps_extending(values: &mut [f64]) {
    let Some(first) = values.iter().position(|v| !v.is_nan()) else {
        return;
    };
    let last = values.iter().rposition(|v| !v.is_nan()).unwrap();
    let (head, tail) = (values[first], values[last]);
    values[..first].fill(head);
    values[last + 1..].fill(tail);
    fill_interior(values);
}

/// An interval during which the state of charge rises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingPulse {
    pub start: i64,
    pub end: i64,
    /// Minutes.
    pub duration: f64,
    /// Percentage points.
    pub delta_soc: f64,
    pub mean_voltage: f64,
    pub mean_current: f64,
    /// Watt-hours.
    pub energy: f64,
    pub delta_v: f64,
}

impl ChargingPulse {
    pub fn day(&self) -> NaiveDate {
        day_of(self.start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseConfig {
    /// Longest run of non-increasing SOC tolerated inside a pulse, seconds.
    pub plateau_tolerance_s: i64,
    /// Sampling gaps longer than this close a pulse, seconds.
    pub max_sample_gap_s: i64,
    pub min_minutes: f64,
    pub max_minutes: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            plateau_tolerance_s: 120,
            max_sample_gap_s: 120,
            min_minutes: 5.0,
            max_minutes: 30.0,
        }
    }
}

pub fn detect_pulses(raw: &RawTelemetry) -> Vec<ChargingPulse> {
    detect_pulses_with(raw, &PulseConfig::default())
}

/// Finds maximal SOC-rising intervals and keeps those whose duration falls in
/// the configured band.
pub fn detect_pulses_with(raw: &RawTelemetry, cfg: &PulseConfig) -> Vec<ChargingPulse> {
    let ts = &raw.timestamps;
    let soc = &raw.soc;
    let n = raw.len();
    let linked = |a: usize| ts[a + 1] - ts[a] <= cfg.max_sample_gap_s;
    let mut pulses = Vec::new();
    let mut i = 0;
    while i + 1 < n {
        if !(linked(i) && soc[i + 1] > soc[i]) {
            i += 1;
            continue;
        }
        let start = i;
        let mut last_rise = i + 1;
        let mut j = i + 1;
        while j + 1 < n && linked(j) {
            if soc[j + 1] > soc[j] {
                last_rise = j + 1;
            } else if ts[j + 1] - ts[last_rise] > cfg.plateau_tolerance_s {
                break;
            }
            j += 1;
        }
        let pulse = summarize_pulse(raw, start, last_rise);
        if pulse.duration >= cfg.min_minutes && pulse.duration <= cfg.max_minutes && pulse.delta_soc > 0.0 {
            pulses.push(pulse);
        }
        i = last_rise;
    }
    pulses
}

fn summarize_pulse(raw: &RawTelemetry, start: usize, end: usize) -> ChargingPulse {
    let ts = &raw.timestamps;
    let mut energy = 0.0;
    for k in start..end {
        energy += raw.voltage[k] * raw.current[k] * (ts[k + 1] - ts[k]) as f64 / 3600.0;
    }
    let count = (end - start + 1) as f64;
    ChargingPulse {
        start: ts[start],
        end: ts[end],
        duration: (ts[end] - ts[start]) as f64 / 60.0,
        delta_soc: raw.soc[end] - raw.soc[start],
        mean_voltage: raw.voltage[start..=end].iter().sum::<f64>() / count,
        mean_current: raw.current[start..=end].iter().sum::<f64>() / count,
        energy: energy.max(0.0),
        delta_v: raw.voltage[end] - raw.voltage[start],
    }
}

/// Daily state of health derived from pulse capacity estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SohSeries {
    pub dates: Vec<NaiveDate>,
    /// Percent of the initial capacity.
    pub soh: Vec<f64>,
    /// Estimated daily capacity, watt-hours per full charge.
    pub capacity: Vec<f64>,
    pub initial_capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SohConfig {
    /// Number of leading days with pulses averaged into the initial capacity.
    pub reference_days: usize,
}

impl Default for SohConfig {
    fn default() -> Self {
        Self { reference_days: 14 }
    }
}

fn day_slot(start: NaiveDate, len: usize, ts: i64) -> Option<usize> {
    let d = (ts - midnight(start)).div_euclid(SECONDS_PER_DAY);
    (d >= 0 && (d as usize) < len).then_some(d as usize)
}

/// Raw per-day capacity: pooled pulse energy over pooled charged SOC fraction.
/// Days without usable pulses are `NaN`.
pub fn daily_capacity(pulses: &[ChargingPulse], start: NaiveDate, len: usize) -> Vec<f64> {
    let mut energy = vec![0.0; len];
    let mut fraction = vec![0.0; len];
    for p in pulses {
        if let Some(d) = day_slot(start, len, p.start) {
            energy[d] += p.energy;
            fraction[d] += p.delta_soc / 100.0;
        }
    }
    energy
        .iter()
        .zip(&fraction)
        .map(|(&e, &f)| if f > 0.0 { e / f } else { f64::NAN })
        .collect()
}

pub fn estimate_soh(pulses: &[ChargingPulse], start: NaiveDate, len: usize) -> Result<SohSeries> {
    estimate_soh_with(pulses, start, len, &SohConfig::default())
}

/// SoH = 100 * C(t) / C0 where C0 is the mean capacity of the first
/// `reference_days` days that have pulses. Missing days are imputed.
pub fn estimate_soh_with(
    pulses: &[ChargingPulse],
    start: NaiveDate,
    len: usize,
    cfg: &SohConfig,
) -> Result<SohSeries> {
    let mut capacity = daily_capacity(pulses, start, len);
    let reference: Vec<f64> = capacity
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .take(cfg.reference_days.max(1))
        .collect();
    if reference.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let initial_capacity = crate::stats::mean(&reference);
    if initial_capacity <= 0.0 {
        return Err(Error::InvalidSpec("initial capacity must be positive".into()));
    }
    fill_gaps_extending(&mut capacity);
    let soh = capacity.iter().map(|c| 100.0 * c / initial_capacity).collect();
    let dates = (0..len).map(|k| start + chrono::Duration::days(k as i64)).collect();
    Ok(SohSeries {
        dates,
        soh,
        capacity,
        initial_capacity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSeries {
    pub dates: Vec<NaiveDate>,
    pub equivalent_cycles: Vec<f64>,
}

impl CycleSeries {
    pub fn last(&self) -> f64 {
        self.equivalent_cycles.last().copied().unwrap_or(0.0)
    }
}

/// Cumulative charge throughput in full-charge equivalents, sampled at the end
/// of each day. Pulses before `start` count toward the first day.
pub fn equivalent_cycles(
    pulses: &[ChargingPulse],
    start: NaiveDate,
    len: usize,
    soc_per_cycle: f64,
) -> CycleSeries {
    let mut daily = vec![0.0; len];
    let origin = midnight(start);
    for p in pulses {
        let d = (p.start - origin).div_euclid(SECONDS_PER_DAY).max(0) as usize;
        if d < len {
            daily[d] += p.delta_soc / soc_per_cycle;
        }
    }
    let mut total = 0.0;
    let equivalent_cycles = daily
        .iter()
        .map(|x| {
            total += x;
            total
        })
        .collect();
    let dates = (0..len).map(|k| start + chrono::Duration::days(k as i64)).collect();
    CycleSeries {
        dates,
        equivalent_cycles,
    }
}

/// Per-day pulse features: summed charging minutes and energy, mean voltage
/// rise and pulse count. Days without pulses are missing except the count.
pub fn daily_pulse_features(pulses: &[ChargingPulse], series: &mut DailySeries) -> Result<()> {
    let start = series.start().ok_or(Error::EmptyInput)?;
    let len = series.len();
    let ts: Vec<i64> = pulses.iter().map(|p| p.start).collect();
    let reduce = |values: Vec<f64>, r: Reducer| crate::series::reduce_by_day(start, len, &ts, &values, r);
    let minutes = reduce(pulses.iter().map(|p| p.duration).collect(), Reducer::Sum);
    let energy = reduce(pulses.iter().map(|p| p.energy).collect(), Reducer::Sum);
    let delta_v = reduce(pulses.iter().map(|p| p.delta_v).collect(), Reducer::Mean);
    let count: Vec<f64> = reduce(vec![1.0; pulses.len()], Reducer::Sum)
        .into_iter()
        .map(|c| if c.is_nan() { 0.0 } else { c })
        .collect();
    series.insert_channel("charge_minutes", minutes)?;
    series.insert_channel("charge_energy", energy)?;
    series.insert_channel("delta_v", delta_v)?;
    series.insert_channel("pulse_count", count)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::midnight;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 6, 1).unwrap()
    }

    fn series(values: Vec<f64>) -> DailySeries {
        DailySeries::new(day0(), values.len()).with_channel("x", values).unwrap()
    }

    /// Idle at `soc0`, then a linear rise of `delta` points over `minutes`,
    /// then idle again; constant voltage/current.
    fn charge_trace(minutes: usize, soc0: f64, delta: f64) -> RawTelemetry {
        let t0 = midnight(day0()) + 8 * 3600;
        let mut raw = RawTelemetry::default();
        for k in 0..10 {
            raw.push(t0 - (10 - k) * 60, 48.0, -5.0, soc0, 25.0);
        }
        for k in 0..=minutes {
            let soc = soc0 + delta * k as f64 / minutes as f64;
            raw.push(t0 + 60 * k as i64, 48.0, 50.0, soc, 25.0);
        }
        let end = soc0 + delta;
        for k in 1..10 {
            raw.push(t0 + 60 * (minutes as i64 + k), 48.0, -5.0, end - 0.1 * k as f64, 25.0);
        }
        raw
    }

    fn pulse(day: i64, energy: f64, delta_soc: f64) -> ChargingPulse {
        let start = midnight(day0()) + day * SECONDS_PER_DAY + 3600;
        ChargingPulse {
            start,
            end: start + 1200,
            duration: 20.0,
            delta_soc,
            mean_voltage: 48.0,
            mean_current: 50.0,
            energy,
            delta_v: 1.0,
        }
    }

    #[test]
    fn constant_channel_keeps_everything() {
        let (out, summary) = remove_outliers(&series(vec![5.0; 20]), "x").unwrap();
        assert_eq!(summary.removed, 0);
        assert_eq!(out.missing_count("x").unwrap(), 0);
    }

    #[test]
    fn spike_in_constant_series_removed() {
        let mut v = vec![0.0; 40];
        v[17] = 100.0;
        let (out, summary) = remove_outliers(&series(v), "x").unwrap();
        assert_eq!(summary.removed, 1);
        assert!(out.channel("x").unwrap()[17].is_nan());
    }

    #[test]
    fn gaussian_removal_rate_near_theory() {
        // P(|Z| > 2.69796) for the 1.5 IQR fence on a standard normal
        let theory = 0.006976;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let trials = 200;
        let mut total = 0.0;
        for _ in 0..trials {
            let v: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
            total += remove_outliers(&series(v), "x").unwrap().1.fraction();
        }
        let mc = total / trials as f64;
        assert!((mc - theory).abs() < 0.005, "mc {mc}");
    }

    #[test]
    fn unknown_channel() {
        assert!(matches!(
            remove_outliers(&series(vec![1.0; 8]), "nope"),
            Err(Error::NoSuchChannel(_))
        ));
    }

    #[test]
    fn imputation_examples() {
        let nan = f64::NAN;
        let out = impute_gaps(&series(vec![1.0, nan, 3.0]), "x").unwrap();
        assert_eq!(out.channel("x").unwrap(), &[1.0, 2.0, 3.0]);
        let out = impute_gaps(&series(vec![1.0, nan, nan, 5.0]), "x").unwrap();
        assert_eq!(out.channel("x").unwrap(), &[1.0, 3.0, 3.0, 5.0]);
        let s = series(vec![1.0, 4.0, 2.0]);
        assert_eq!(impute_gaps(&s, "x").unwrap(), s);
        assert!(matches!(
            impute_gaps(&series(vec![nan, 1.0]), "x"),
            Err(Error::UnboundedGap { .. })
        ));
    }

    #[test]
    fn extending_fill_handles_edges() {
        let nan = f64::NAN;
        let mut v = vec![nan, 2.0, nan, 4.0, nan];
        fill_gaps_extending(&mut v);
        assert_eq!(v, vec![2.0, 2.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn constant_soc_has_no_pulses() {
        let mut raw = RawTelemetry::default();
        for k in 0..500 {
            raw.push(60 * k, 48.0, 0.0, 55.0, 20.0);
        }
        assert!(detect_pulses(&raw).is_empty());
    }

    #[test]
    fn single_synthetic_charge() {
        let pulses = detect_pulses(&charge_trace(20, 40.0, 20.0));
        assert_eq!(pulses.len(), 1);
        let p = &pulses[0];
        assert!((p.duration - 20.0).abs() < 1e-12);
        assert!((p.delta_soc - 20.0).abs() < 1e-9);
        // 48 V * 50 A * 20/60 h
        assert!((p.energy - 800.0).abs() < 1e-9);
        assert_eq!(p.mean_voltage, 48.0);
        assert_eq!(p.mean_current, 50.0);
    }

    #[test]
    fn long_rise_is_excluded() {
        assert!(detect_pulses(&charge_trace(45, 20.0, 45.0)).is_empty());
        assert!(detect_pulses(&charge_trace(3, 20.0, 3.0)).is_empty());
    }

    #[test]
    fn short_plateau_does_not_split_pulse() {
        let mut raw = charge_trace(20, 40.0, 20.0);
        // flatten two minutes in the middle of the rise (samples 10 + 5, 10 + 6)
        raw.soc[16] = raw.soc[15];
        raw.soc[17] = raw.soc[15];
        let pulses = detect_pulses(&raw);
        assert_eq!(pulses.len(), 1);
        assert!((pulses[0].duration - 20.0).abs() < 1e-12);

        let mut raw = charge_trace(20, 40.0, 20.0);
        for k in 16..=19 {
            raw.soc[k] = raw.soc[15];
        }
        // a four-minute stall closes the first pulse; both halves are too short
        let pulses = detect_pulses(&raw);
        assert!(pulses.iter().all(|p| p.duration < 20.0));
    }

    #[test]
    fn flat_soh_for_identical_days() {
        let pulses: Vec<_> = (0..30).map(|d| pulse(d, 800.0, 20.0)).collect();
        let soh = estimate_soh(&pulses, day0(), 30).unwrap();
        assert!((soh.initial_capacity - 4000.0).abs() < 1e-9);
        assert!(soh.soh.iter().all(|s| (s - 100.0).abs() < 1e-12));
    }

    #[test]
    fn pooled_daily_ratio() {
        let pulses = vec![pulse(0, 800.0, 20.0), pulse(0, 400.0, 10.0)];
        let cap = daily_capacity(&pulses, day0(), 1);
        assert!((cap[0] - 4000.0).abs() < 1e-9);
    }

    #[test]
    fn linear_capacity_decay_recovers_slope() {
        let years = 3.0;
        let days = (365.0 * years) as i64;
        let pulses: Vec<_> = (0..days)
            .map(|d| {
                let cap = 4000.0 * (1.0 - 0.022 * d as f64 / 365.0);
                pulse(d, cap * 0.4, 40.0)
            })
            .collect();
        let soh = estimate_soh(&pulses, day0(), days as usize).unwrap();
        let slope = crate::stats::linear_slope(&soh.soh) * 365.0;
        assert!((slope + 2.2).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn soh_needs_a_pulse() {
        assert!(estimate_soh(&[], day0(), 10).is_err());
    }

    #[test]
    fn missing_days_are_imputed() {
        let pulses = vec![pulse(0, 800.0, 20.0), pulse(2, 840.0, 20.0)];
        let soh = estimate_soh(&pulses, day0(), 4).unwrap();
        assert!(soh.soh.iter().all(|s| s.is_finite()));
        assert!((soh.capacity[1] - 4100.0).abs() < 1e-9);
        assert_eq!(soh.capacity[3], soh.capacity[2]);
    }

    #[test]
    fn cycles_examples() {
        let c = equivalent_cycles(&[], day0(), 5, 100.0);
        assert_eq!(c.equivalent_cycles, vec![0.0; 5]);
        let pulses: Vec<_> = (0..10).map(|d| pulse(d, 1.0, 100.0)).collect();
        let c = equivalent_cycles(&pulses, day0(), 10, 100.0);
        assert!((c.last() - 10.0).abs() < 1e-12);
        // two 41-point charges a day for ten years
        let days = 3650;
        let pulses: Vec<_> = (0..days)
            .flat_map(|d| [pulse(d, 1.0, 41.0), pulse(d, 1.0, 41.0)])
            .collect();
        let c = equivalent_cycles(&pulses, day0(), days as usize, 100.0);
        assert!((c.last() - 2993.0).abs() < 1e-6);
        assert!(c.equivalent_cycles.windows(2).all(|w| w[1] >= w[0]));
    }

    proptest! {
        #[test]
        fn imputation_preserves_present_values(
            raw in prop::collection::vec(prop::option::of(-50.0f64..50.0), 2..40)
        ) {
            let mut v: Vec<f64> = raw.iter().map(|x| x.unwrap_or(f64::NAN)).collect();
            v[0] = 1.0;
            let last = v.len() - 1;
            v[last] = 2.0;
            let out = impute_gaps(&series(v.clone()), "x").unwrap();
            let filled = out.channel("x").unwrap();
            for (a, b) in v.iter().zip(filled) {
                prop_assert!(!b.is_nan());
                if !a.is_nan() {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn survivors_inside_first_fences(v in prop::collection::vec(-1e3f64..1e3, 8..80)) {
            let (once, s1) = remove_outliers(&series(v), "x").unwrap();
            let Ok((twice, _)) = remove_outliers(&once, "x") else { return Ok(()); };
            for x in twice.channel("x").unwrap().iter().filter(|x| x.is_finite()) {
                prop_assert!(s1.stats.contains(*x));
            }
        }

        #[test]
        fn soh_is_scale_invariant(
            energies in prop::collection::vec(100.0f64..1000.0, 5..40),
            k in 0.01f64..100.0,
        ) {
            let pulses: Vec<_> = energies.iter().enumerate().map(|(d, &e)| pulse(d as i64, e, 20.0)).collect();
            let scaled: Vec<_> = pulses.iter().cloned().map(|mut p| { p.energy *= k; p }).collect();
            let a = estimate_soh(&pulses, day0(), energies.len()).unwrap();
            let b = estimate_soh(&scaled, day0(), energies.len()).unwrap();
            for (x, y) in a.soh.iter().zip(&b.soh) {
                prop_assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn cycles_are_additive(
            a in prop::collection::vec(1.0f64..60.0, 0..20),
            b in prop::collection::vec(1.0f64..60.0, 0..20),
        ) {
            let pa: Vec<_> = a.iter().enumerate().map(|(d, &s)| pulse(d as i64, 1.0, s)).collect();
            let pb: Vec<_> = b.iter().enumerate().map(|(d, &s)| pulse(20 + d as i64, 1.0, s)).collect();
            let all: Vec<_> = pa.iter().chain(&pb).cloned().collect();
            let len = 40;
            let total = equivalent_cycles(&all, day0(), len, 100.0).last();
            let parts = equivalent_cycles(&pa, day0(), len, 100.0).last()
                + equivalent_cycles(&pb, day0(), len, 100.0).last();
            prop_assert!((total - parts).abs() < 1e-9);
        }

        #[test]
        fn pulses_disjoint_and_ordered(
            deltas in prop::collection::vec((5usize..25, 5.0f64..30.0, 5usize..30), 1..6)
        ) {
            let mut raw = RawTelemetry::default();
            let mut t = 0i64;
            let mut soc = 10.0;
            for (minutes, delta, idle) in deltas {
                for _ in 0..idle {
                    raw.push(t, 48.0, -3.0, soc, 20.0);
                    soc = (soc - 0.2f64).max(0.0);
                    t += 60;
                }
                for k in 0..=minutes {
                    raw.push(t, 48.0, 40.0, (soc + delta * k as f64 / minutes as f64).min(100.0), 20.0);
                    t += 60;
                }
                soc = (soc + delta).min(100.0) - 1.0;
            }
            let pulses = detect_pulses(&raw);
            for w in pulses.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for p in &pulses {
                prop_assert!(p.duration >= 5.0 && p.duration <= 30.0);
                prop_assert!(p.delta_soc > 0.0 && p.energy >= 0.0);
            }
        }
    }
}
