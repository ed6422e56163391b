//! Seeded generator of labelled multivariate sensor streams.
//!
//! Each sensor is a unit-amplitude seasonal sine (phase-shifted per sensor)
//! plus stationary AR(1) noise plus a coupling to the mean of the other
//! sensors' previous clean values. Anomalies are injected afterwards; each
//! event shifts a random subset of `sensors_per_event` sensors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::data::SeriesTable;
use crate::error::{bail, Result};
use crate::math;

/// Share of the anomalous frames produced by each anomaly kind.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(deny_unknown_fields))]
pub struct AnomalyMix {
    pub point: f64,
    pub contextual: f64,
    pub collective: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(deny_unknown_fields))]
pub struct SynthSpec {
    pub n_sensors: usize,
    pub length: usize,
    /// Seasonal period in rows.
    pub seasonal_period: f64,
    pub ar_coef: f64,
    pub coupling: f64,
    /// Marginal standard deviation of the AR(1) noise.
    pub noise_sd: f64,
    pub anomaly_mix: AnomalyMix,
    /// Inclusive `[min, max]` length of collective runs.
    pub collective_run: [usize; 2],
    /// Sensors shifted by each anomaly event, chosen at random per event,
    /// each with its own sign.
    pub sensors_per_event: usize,
    /// Anomaly size as a multiple of `noise_sd`.
    pub magnitude: f64,
    /// Fraction of rows labelled anomalous.
    pub anomaly_fraction: f64,
}

impl SynthSpec {
    /// Four sensors, 5000 rows, 10% anomalous rows split evenly between
    /// point spikes and collective runs; every event moves all four sensors
    /// by 3 noise sd.
    pub fn smoke() -> Self {
        Self {
            n_sensors: 4,
            length: 5000,
            seasonal_period: 50.0,
            ar_coef: 0.8,
            coupling: 0.2,
            noise_sd: 1.0,
            anomaly_mix: AnomalyMix {
                point: 0.5,
                contextual: 0.0,
                collective: 0.5,
            },
            collective_run: [20, 40],
            sensors_per_event: 4,
            magnitude: 3.0,
            anomaly_fraction: 0.1,
        }
    }

    /// Like [`SynthSpec::smoke`] but nearly all anomalous rows come from
    /// collective runs.
    pub fn collective() -> Self {
        Self {
            anomaly_mix: AnomalyMix {
                point: 0.1,
                contextual: 0.0,
                collective: 0.9,
            },
            ..Self::smoke()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 {
            bail!(Config, "n_sensors must be at least 1");
        }
        if self.length < 2 {
            bail!(Config, "length must be at least 2, got {}", self.length);
        }
        if !(self.seasonal_period > 0.0 && self.seasonal_period.is_finite()) {
            bail!(Config, "seasonal_period must be positive, got {}", self.seasonal_period);
        }
        if !(self.ar_coef.abs() < 1.0) {
            bail!(Config, "ar_coef must lie in (-1, 1), got {}", self.ar_coef);
        }
        if !self.coupling.is_finite() {
            bail!(Config, "coupling must be finite");
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            bail!(Config, "noise_sd must be positive, got {}", self.noise_sd);
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            bail!(Config, "magnitude must be positive, got {}", self.magnitude);
        }
        let m = &self.anomaly_mix;
        for (name, v) in [("point", m.point), ("contextual", m.contextual), ("collective", m.collective)] {
            if !(0.0..=1.0).contains(&v) {
                bail!(Config, "anomaly_mix.{} must lie in [0, 1], got {}", name, v);
            }
        }
        if ((m.point + m.contextual + m.collective) - 1.0).abs() > 1e-9 {
            bail!(Config, "anomaly_mix fractions must sum to 1");
        }
        if !(0.0..1.0).contains(&self.anomaly_fraction) {
            bail!(Config, "anomaly_fraction must lie in [0, 1), got {}", self.anomaly_fraction);
        }
        if self.anomaly_fraction > 0.0 && self.anomaly_fraction * (self.length as f64) < 1.0 {
            bail!(
                Config,
                "anomaly_fraction {} of {} rows is less than one anomalous row",
                self.anomaly_fraction,
                self.length
            );
        }
        if self.sensors_per_event == 0 || self.sensors_per_event > self.n_sensors {
            bail!(
                Config,
                "sensors_per_event must lie in [1, n_sensors = {}], got {}",
                self.n_sensors,
                self.sensors_per_event
            );
        }
        let [lo, hi] = self.collective_run;
        if lo == 0 || lo > hi {
            bail!(Config, "collective_run must satisfy 1 <= min <= max, got [{}, {}]", lo, hi);
        }
        if m.collective > 0.0 && hi > self.length {
            bail!(Config, "collective_run max {} exceeds length {}", hi, self.length);
        }
        Ok(())
    }

    /// Anomalous rows per kind: `(point, contextual, collective)`.
    ///
    /// Largest-remainder rounding of the mix applied to
    /// `round(anomaly_fraction * length)`. Collective rows too few to form
    /// a run of the minimum length are injected as point anomalies instead.
    pub fn frame_budget(&self) -> (usize, usize, usize) {
        let total = math::floor(self.anomaly_fraction * self.length as f64 + 0.5) as usize;
        let m = &self.anomaly_mix;
        let shares = [m.point, m.contextual, m.collective].map(|s| s * total as f64);
        let mut counts = shares.map(|s| math::floor(s) as usize);
        let mut rest = total - counts.iter().sum::<usize>();
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = shares[a] - counts[a] as f64;
            let rb = shares[b] - counts[b] as f64;
            rb.total_cmp(&ra)
        });
        for &k in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            if shares[k] > 0.0 {
                counts[k] += 1;
                rest -= 1;
            }
        }
        (counts[0], counts[1], counts[2])
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; 1 - u keeps the log argument in (0, 1]
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * PI * u2)
}

/// Finds a start for `len` rows with no occupied row within one row of it.
fn free_start(rng: &mut ChaCha8Rng, occupied: &[bool], len: usize) -> Option<usize> {
    let t = occupied.len();
    let fits = |s: usize| {
        let lo = s.saturating_sub(1);
        let hi = (s + len + 1).min(t);
        occupied[lo..hi].iter().all(|o| !o)
    };
    for _ in 0..10_000 {
        let s = rng.random_range(0..=t - len);
        if fits(s) {
            return Some(s);
        }
    }
    (0..=t - len).find(|&s| fits(s))
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SeriesTable> {
    spec.validate()?;
    let (n, t) = (spec.n_sensors, spec.length);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let season = |i: usize, k: usize| math::sin(2.0 * PI * i as f64 / spec.seasonal_period + 2.0 * PI * k as f64 / n as f64);
    let innovation_sd = spec.noise_sd * math::sqrt(1.0 - spec.ar_coef * spec.ar_coef);
    let mut noise: Vec<f64> = (0..n).map(|_| spec.noise_sd * normal(&mut rng)).collect();
    let mut values = vec![0.0; t * n];
    for i in 0..t {
        if i > 0 {
            for e in noise.iter_mut() {
                *e = spec.ar_coef * *e + innovation_sd * normal(&mut rng);
            }
        }
        for k in 0..n {
            let coupled = if i > 0 && n > 1 {
                let prev = &values[(i - 1) * n..i * n];
                (prev.iter().sum::<f64>() - prev[k]) / (n - 1) as f64
            } else {
                0.0
            };
            values[i * n + k] = season(i, k) + noise[k] + spec.coupling * coupled;
        }
    }

    let size = spec.magnitude * spec.noise_sd;
    let width = spec.sensors_per_event;
    let mut labels = vec![0u8; t];
    let mut occupied = vec![false; t];
    let (points, contextual, collective) = spec.frame_budget();
    let [lo, hi] = spec.collective_run;

    let mut remaining = collective;
    while remaining >= lo {
        // leave either nothing or room for another full run
        let len = if remaining <= hi {
            remaining
        } else if remaining - lo >= lo {
            rng.random_range(lo..=hi.min(remaining - lo))
        } else {
            rng.random_range(lo..=hi)
        };
        let Some(start) = free_start(&mut rng, &occupied, len) else {
            bail!(Config, "{}", format!("no room left for a collective run of {len} rows"));
        };
        let shifts: Vec<(usize, f64)> = index::sample(&mut rng, n, width)
            .into_iter()
            .map(|k| (k, if rng.random_bool(0.5) { size } else { -size }))
            .collect();
        for i in start..start + len {
            for &(k, d) in &shifts {
                values[i * n + k] += d;
            }
            labels[i] = 1;
            occupied[i] = true;
        }
        remaining -= len;
    }
    let points = points + remaining;
    for kind in [0, 1] {
        let count = if kind == 0 { points } else { contextual };
        for _ in 0..count {
            let Some(i) = free_start(&mut rng, &occupied, 1) else {
                bail!(Config, "no room left for a single-row anomaly");
            };
            for k in index::sample(&mut rng, n, width) {
                let sign = if kind == 0 {
                    if rng.random_bool(0.5) { 1.0 } else { -1.0 }
                } else {
                    // push against the seasonal phase: a level that is common
                    // elsewhere in the cycle but wrong at this point
                    if season(i, k) > 0.0 { -1.0 } else { 1.0 }
                };
                values[i * n + k] += sign * size;
            }
            labels[i] = 1;
            occupied[i] = true;
        }
    }

    SeriesTable::new(
        (0..t as i64).collect(),
        values,
        labels,
        (0..n).map(|k| format!("s{k}")).collect(),
    )
}
