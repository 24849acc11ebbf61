//! Seeded synthetic pack telemetry: seasonal ambient temperature, Poisson
//! charging pulses, linearly fading capacity with noise, recovery bumps and
//! optional fault bursts. Also a small generator for household-format files.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{midnight, RawTelemetry, SECONDS_PER_DAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultSpec {
    pub bursts: usize,
    pub burst_days: usize,
    /// Relative capacity error, applied with alternating sign day by day.
    pub magnitude: f64,
}

impl Default for FaultSpec {
    fn default() -> Self {
        Self {
            bursts: 2,
            burst_days: 4,
            magnitude: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetSynthSpec {
    pub n_batteries: usize,
    pub years: f64,
    pub start: NaiveDate,
    /// Capacity fade, percentage points of the initial capacity per year.
    pub degradation_pp_per_year: f64,
    /// Batteries after the first draw their fade rate within this relative band.
    pub rate_spread: f64,
    pub temp_mean: f64,
    pub temp_amplitude: f64,
    pub pulse_rate_per_day: f64,
    pub delta_soc_mean: f64,
    pub delta_soc_std: f64,
    /// SOC percentage points gained per charging minute.
    pub charge_rate: f64,
    pub capacity_wh: f64,
    /// Relative day-to-day capacity noise.
    pub capacity_noise: f64,
    pub weekly_amplitude: f64,
    /// Relative capacity change per degree above the mean temperature.
    pub temp_coefficient: f64,
    pub recoveries_per_year: f64,
    pub recovery_magnitude: f64,
    pub recovery_decay_days: f64,
    pub charge_interval_s: i64,
    pub idle_interval_s: i64,
    pub faults: Option<FaultSpec>,
    pub seed: u64,
}

impl Default for FleetSynthSpec {
    fn default() -> Self {
        Self {
            n_batteries: 3,
            years: 3.0,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            degradation_pp_per_year: 2.2,
            rate_spread: 0.15,
            temp_mean: 27.0,
            temp_amplitude: 4.0,
            pulse_rate_per_day: 2.0,
            delta_soc_mean: 41.0,
            delta_soc_std: 8.0,
            charge_rate: 2.0,
            capacity_wh: 10_000.0,
            capacity_noise: 0.003,
            weekly_amplitude: 0.001,
            temp_coefficient: 0.0005,
            recoveries_per_year: 4.0,
            recovery_magnitude: 0.004,
            recovery_decay_days: 5.0,
            charge_interval_s: 60,
            idle_interval_s: 60,
            faults: None,
            seed: 0,
        }
    }
}

impl FleetSynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n_batteries == 0 {
            return fail("n_batteries must be at least 1");
        }
        if !(self.years > 0.0) {
            return fail("years must be positive");
        }
        if !(self.degradation_pp_per_year > 0.0) {
            return fail("degradation rate must be positive");
        }
        if !(self.pulse_rate_per_day > 0.0) || !(self.charge_rate > 0.0) || !(self.capacity_wh > 0.0) {
            return fail("pulse rate, charge rate and capacity must be positive");
        }
        if self.charge_interval_s <= 0 || self.idle_interval_s <= 0 {
            return fail("sampling intervals must be positive");
        }
        if !(0.0..1.0).contains(&self.rate_spread) || self.capacity_noise < 0.0 || self.delta_soc_std < 0.0 {
            return fail("spread and noise levels must be non-negative");
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        (self.years * 365.25).round() as usize
    }

    /// Lower and upper ΔSOC bounds that keep every pulse within 5-30 minutes.
    fn delta_soc_bounds(&self) -> (f64, f64) {
        (5.0 * self.charge_rate, 29.0 * self.charge_rate)
    }
}

/// One synthetic battery and its generating capacity factor per day.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBattery {
    pub telemetry: RawTelemetry,
    /// Capacity relative to the nominal capacity, one value per day.
    pub capacity_factor: Vec<f64>,
    pub degradation_pp_per_year: f64,
    pub pulses: usize,
    pub charged_soc: f64,
}

fn ambient(spec: &FleetSynthSpec, date: NaiveDate) -> f64 {
    let doy = date.ordinal0() as f64;
    spec.temp_mean + spec.temp_amplitude * (TAU * (doy - 105.0) / 365.25).sin()
}

fn ambient_at(spec: &FleetSynthSpec, date: NaiveDate, second_of_day: i64) -> f64 {
    let hour = second_of_day as f64 / 3600.0;
    ambient(spec, date) + 1.5 * (TAU * (hour - 9.0) / 24.0).sin()
}

struct Emitter<'a> {
    spec: &'a FleetSynthSpec,
    raw: RawTelemetry,
    cursor: i64,
    soc: f64,
    capacity: f64,
}

impl Emitter<'_> {
    fn push(&mut self, ts: i64, voltage: f64, current: f64, soc: f64) {
        let day = ts.div_euclid(SECONDS_PER_DAY);
        let date = crate::series::day_of(day * SECONDS_PER_DAY);
        let temp = ambient_at(self.spec, date, ts - day * SECONDS_PER_DAY);
        self.raw.push(ts, voltage, current, soc, temp);
    }

    /// Idle samples strictly between the cursor and `until`, SOC falling
    /// linearly towards `soc_target`.
    fn idle(&mut self, until: i64, soc_target: f64) {
        let span = (until - self.cursor) as f64;
        let slope = (soc_target - self.soc) / span.max(1.0);
        let current = slope * self.capacity / 100.0 * 3600.0 / 48.0;
        let mut t = self.cursor + self.spec.idle_interval_s;
        while t < until {
            let soc = self.soc + slope * (t - self.cursor) as f64;
            self.push(t, 48.0 + 0.04 * soc, current, soc);
            t += self.spec.idle_interval_s;
        }
    }

    fn charge(&mut self, start: i64, soc_start: f64, delta: f64) {
        let dt = self.spec.charge_interval_s;
        let step = self.spec.charge_rate * dt as f64 / 60.0;
        let n = (delta / step).ceil() as usize;
        let socs: Vec<f64> = (0..=n).map(|k| soc_start + (k as f64 * step).min(delta)).collect();
        for k in 0..=n {
            let v = 49.0 + 0.04 * socs[k];
            // energy of step k equals capacity * dSOC / 100 exactly
            let i = if k < n {
                self.capacity * (socs[k + 1] - socs[k]) / 100.0 * 3600.0 / (v * dt as f64)
            } else {
                0.0
            };
            self.push(start + k as i64 * dt, v, i, socs[k]);
        }
        self.cursor = start + n as i64 * dt;
        self.soc = socs[n];
    }
}

pub fn synth_battery(spec: &FleetSynthSpec, index: usize) -> Result<SynthBattery> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let days = spec.n_days();
    let rate = if index == 0 {
        spec.degradation_pp_per_year
    } else {
        spec.degradation_pp_per_year * (1.0 + spec.rate_spread * (2.0 * rng.random::<f64>() - 1.0))
    };
    let noise = Normal::new(0.0, spec.capacity_noise).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let dsoc = Normal::new(spec.delta_soc_mean, spec.delta_soc_std).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let pulses_per_day = Poisson::new(spec.pulse_rate_per_day).map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let mut fault = vec![0.0; days];
    if let Some(f) = &spec.faults {
        for _ in 0..f.bursts {
            let d0 = rng.random_range(0..days.max(1));
            for (k, slot) in fault.iter_mut().skip(d0).take(f.burst_days).enumerate() {
                *slot += if k % 2 == 0 { f.magnitude } else { -f.magnitude };
            }
        }
    }

    let mut bump = 0.0;
    let decay = (-1.0 / spec.recovery_decay_days.max(1e-9)).exp();
    let p_bump = spec.recoveries_per_year / 365.25;
    let mut capacity_factor = Vec::with_capacity(days);
    let origin = midnight(spec.start);
    let (lo, hi) = spec.delta_soc_bounds();
    let mut em = Emitter {
        spec,
        raw: RawTelemetry::default(),
        cursor: origin - spec.idle_interval_s,
        soc: 90.0,
        capacity: spec.capacity_wh,
    };
    let mut n_pulses = 0;
    let mut charged = 0.0;
    for d in 0..days {
        let date = spec.start + chrono::Duration::days(d as i64);
        bump *= decay;
        if rng.random::<f64>() < p_bump {
            bump += spec.recovery_magnitude;
        }
        let years = d as f64 / 365.25;
        let factor = 1.0 - rate / 100.0 * years
            + spec.temp_coefficient * (ambient(spec, date) - spec.temp_mean)
            + spec.weekly_amplitude * (TAU * d as f64 / 7.0).sin()
            + bump
            + noise.sample(&mut rng)
            + fault[d];
        capacity_factor.push(factor);
        em.capacity = spec.capacity_wh * factor;

        let k = (pulses_per_day.sample(&mut rng) as usize).min(12);
        let day_start = origin + d as i64 * SECONDS_PER_DAY;
        if k > 0 {
            let slot = SECONDS_PER_DAY / k as i64;
            for j in 0..k {
                let offset = rng.random_range(0..slot / 2) / 60 * 60;
                let start = day_start + j as i64 * slot + offset;
                let delta = dsoc.sample(&mut rng).clamp(lo, hi);
                let soc_start = (95.0 - delta - 10.0 * rng.random::<f64>()).max(1.0);
                if start <= em.cursor {
                    continue;
                }
                em.idle(start, soc_start);
                em.soc = soc_start;
                em.charge(start, soc_start, delta);
                n_pulses += 1;
                charged += delta;
            }
        }
    }
    let end = origin + days as i64 * SECONDS_PER_DAY;
    let tail_soc = (em.soc - 5.0).max(0.0);
    em.idle(end, tail_soc);
    Ok(SynthBattery {
        telemetry: em.raw,
        capacity_factor,
        degradation_pp_per_year: rate,
        pulses: n_pulses,
        charged_soc: charged,
    })
}

pub fn synth_fleet(spec: &FleetSynthSpec) -> Result<Vec<RawTelemetry>> {
    spec.validate()?;
    (0..spec.n_batteries)
        .into_par_iter()
        .map(|i| synth_battery(spec, i).map(|b| b.telemetry))
        .collect()
}

/// Household-format text with `readings_per_day` readings per day over
/// `months` months: a winter-peaking seasonal mean, a mild trend, reading
/// noise and occasional `?` cells.
pub fn household_surrogate(start: NaiveDate, months: u32, readings_per_day: u32, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reading = Normal::new(0.0, 0.35).expect("valid");
    let monthly = Normal::new(0.0, 0.05).expect("valid");
    let mut out = String::from(
        "Date;Time;Global_active_power;Global_reactive_power;Voltage;Global_intensity;Sub_metering_1;Sub_metering_2;Sub_metering_3\n",
    );
    let end = start
        .checked_add_months(chrono::Months::new(months))
        .expect("date in range");
    let step = SECONDS_PER_DAY / readings_per_day.max(1) as i64;
    let mut date = start;
    let mut month_shift = monthly.sample(&mut rng);
    while date < end {
        if date.day() == 1 {
            month_shift = monthly.sample(&mut rng);
        }
        let m = date.month0() as f64 + date.day0() as f64 / 30.0;
        let elapsed = (date - start).num_days() as f64 / 365.25;
        let level = 1.1 + 0.35 * (TAU * (m + 0.5) / 12.0).cos() - 0.03 * elapsed + month_shift;
        for r in 0..readings_per_day.max(1) {
            let secs = r as i64 * step;
            let _ = write!(
                out,
                "{};{:02}:{:02}:{:02};",
                date.format("%-d/%-m/%Y"),
                secs / 3600,
                secs % 3600 / 60,
                secs % 60
            );
            if rng.random::<f64>() < 0.01 {
                out.push_str("?;?;?;?;?;?;\n");
            } else {
                let v = (level + reading.sample(&mut rng)).max(0.08);
                let _ = writeln!(out, "{v:.3};0.100;240.00;{:.3};0.000;1.000;17.000", v * 4.2);
            }
        }
        date = date.succ_opt().expect("date in range");
    }
    out
}
