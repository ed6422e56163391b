//! Series tables and the leak-free preprocessing chain:
//! split -> interpolate -> fit standardizer/discretizer on train -> window
//! -> oversample train.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::math;

/// Timestamped multivariate series with binary labels. Missing readings are
/// stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    timestamps: Vec<i64>,
    /// `[T, N]` row-major.
    features: Vec<f64>,
    labels: Vec<u8>,
    feature_names: Vec<String>,
}

impl SeriesTable {
    pub fn new(
        timestamps: Vec<i64>,
        features: Vec<f64>,
        labels: Vec<u8>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let t = timestamps.len();
        let n = feature_names.len();
        if n == 0 {
            bail!(Data, "table has no feature columns");
        }
        if labels.len() != t || features.len() != t * n {
            bail!(
                Data,
                "inconsistent table: {} timestamps, {} labels, {} values for {} features",
                t,
                labels.len(),
                features.len(),
                n
            );
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            bail!(Data, "label {} at row {} is not 0/1", labels[i], i);
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] < w[0]) {
            bail!(Data, "timestamps decrease at row {}", i + 1);
        }
        Ok(Self {
            timestamps,
            features,
            labels,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.n_features();
        &self.features[t * n..(t + 1) * n]
    }

    pub fn value(&self, t: usize, k: usize) -> f64 {
        self.features[t * self.n_features() + k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        let n = self.n_features();
        self.features.iter().skip(k).step_by(n).copied().collect()
    }

    pub fn missing_count(&self) -> usize {
        self.features.iter().filter(|v| v.is_nan()).count()
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Rows `start..end` as a new table.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let n = self.n_features();
        Self {
            timestamps: self.timestamps[start..end].to_vec(),
            features: self.features[start * n..end * n].to_vec(),
            labels: self.labels[start..end].to_vec(),
            feature_names: self.feature_names.clone(),
        }
    }

    fn with_features(&self, features: Vec<f64>) -> Self {
        Self {
            timestamps: self.timestamps.clone(),
            features,
            labels: self.labels.clone(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Fills gaps per column: index-linear between the nearest present
/// neighbours, nearest present value at the ends.
pub fn interpolate_missing(s: &SeriesTable) -> Result<SeriesTable> {
    let (t, n) = (s.len(), s.n_features());
    let mut out = s.features.clone();
    for k in 0..n {
        let present: Vec<usize> = (0..t).filter(|&i| !s.value(i, k).is_nan()).collect();
        let (Some(&first), Some(&last)) = (present.first(), present.last()) else {
            bail!(Data, "column {} has no present values", s.feature_names[k]);
        };
        for i in 0..first {
            out[i * n + k] = s.value(first, k);
        }
        for i in last + 1..t {
            out[i * n + k] = s.value(last, k);
        }
        for w in present.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (va, vb) = (s.value(a, k), s.value(b, k));
            for i in a + 1..b {
                let frac = (i - a) as f64 / (b - a) as f64;
                out[i * n + k] = va + (vb - va) * frac;
            }
        }
    }
    Ok(s.with_features(out))
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Fits on present values only.
    pub fn fit(train: &SeriesTable) -> Self {
        let n = train.n_features();
        let mut mean = vec![0.0; n];
        let mut sd = vec![0.0; n];
        for k in 0..n {
            let col: Vec<f64> = train.column(k).into_iter().filter(|v| !v.is_nan()).collect();
            if col.is_empty() {
                continue;
            }
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
            mean[k] = m;
            sd[k] = math::sqrt(var);
        }
        Self { mean, sd }
    }

    /// `(x - mean) / sd`, or 0 where `sd == 0`. Missing values stay missing.
    pub fn apply(&self, s: &SeriesTable) -> Result<SeriesTable> {
        let n = s.n_features();
        if n != self.mean.len() {
            bail!(Data, "standardizer fitted on {} features, table has {}", self.mean.len(), n);
        }
        let out = s
            .features
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let k = i % n;
                if x.is_nan() {
                    x
                } else if self.sd[k] == 0.0 {
                    0.0
                } else {
                    (x - self.mean[k]) / self.sd[k]
                }
            })
            .collect();
        Ok(s.with_features(out))
    }
}

/// Per-feature ascending cut points; a value's bin is the number of edges
/// strictly below it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Discretizer {
    pub bins: usize,
    pub edges: Vec<Vec<f64>>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = math::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Discretizer {
    /// Edges at the `k/B` quantiles (`k = 1..B-1`) of each training column,
    /// de-duplicated. Constant columns get no edges.
    pub fn fit(train: &SeriesTable, bins: usize) -> Result<Self> {
        if bins < 2 {
            bail!(Config, "discretizer needs at least 2 bins, got {}", bins);
        }
        let mut edges = Vec::with_capacity(train.n_features());
        for k in 0..train.n_features() {
            let mut col: Vec<f64> = train.column(k).into_iter().filter(|v| !v.is_nan()).collect();
            col.sort_by(f64::total_cmp);
            let mut e: Vec<f64> = Vec::new();
            if let (Some(&lo), Some(&hi)) = (col.first(), col.last()) {
                if lo < hi {
                    for q in 1..bins {
                        let v = quantile(&col, q as f64 / bins as f64);
                        if e.last().is_none_or(|&last| v > last) {
                            e.push(v);
                        }
                    }
                }
            }
            edges.push(e);
        }
        Ok(Self { bins, edges })
    }

    pub fn bin(&self, feature: usize, x: f64) -> usize {
        self.edges[feature]
            .partition_point(|&e| e < x)
            .min(self.bins - 1)
    }

    pub fn discretize_frame(&self, frame: &[f64]) -> Vec<usize> {
        frame
            .iter()
            .enumerate()
            .map(|(k, &x)| self.bin(k, x))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, e) in self.edges.iter().enumerate() {
            if e.len() >= self.bins || e.windows(2).any(|w| !(w[0] < w[1])) {
                bail!(Schema, "discretizer edges for feature {} are not strictly increasing and fewer than bins", k);
            }
        }
        Ok(())
    }
}

/// One training/evaluation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[W_s, N]` row-major standardized values.
    pub window: Vec<f64>,
    pub n_sensors: usize,
    /// Bin ids of the last frame.
    pub ids: Vec<usize>,
    pub label: u8,
    /// Source row of the last frame.
    pub t_index: usize,
}

impl WindowSample {
    pub fn window_len(&self) -> usize {
        self.window.len() / self.n_sensors
    }

    pub fn last_frame(&self) -> &[f64] {
        &self.window[self.window.len() - self.n_sensors..]
    }
}

/// The window of `w` rows ending at row `end`.
pub fn window_at(s: &SeriesTable, disc: &Discretizer, w: usize, end: usize) -> WindowSample {
    let n = s.n_features();
    let start = end + 1 - w;
    let window = s.features[start * n..(end + 1) * n].to_vec();
    let ids = disc.discretize_frame(s.row(end));
    WindowSample {
        window,
        n_sensors: n,
        ids,
        label: s.labels[end],
        t_index: end,
    }
}

/// Every complete window, in chronological order: `T - w + 1` samples.
pub fn make_windows(s: &SeriesTable, w: usize, disc: &Discretizer) -> Result<Vec<WindowSample>> {
    if w == 0 {
        bail!(Config, "window must be positive");
    }
    if s.len() < w {
        bail!(Data, "series of {} rows is shorter than the window {}", s.len(), w);
    }
    if disc.edges.len() != s.n_features() {
        bail!(Data, "discretizer covers {} features, table has {}", disc.edges.len(), s.n_features());
    }
    Ok((w - 1..s.len()).map(|end| window_at(s, disc, w, end)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct OversampleConfig {
    /// Minimum anomaly fraction after oversampling.
    pub target_ratio: f64,
    pub max_shift: usize,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        Self {
            target_ratio: 0.2,
            max_shift: 3,
        }
    }
}

/// Anomaly count needed so that `a / (a + normal) >= ratio`.
pub fn required_anomalies(normal: usize, ratio: f64) -> usize {
    let exact = normal as f64 * ratio / (1.0 - ratio);
    math::ceil(exact - 1e-9).max(0.0) as usize
}

/// Tops up anomalous windows with time-shifted copies until the anomaly
/// fraction reaches the target.
///
/// Copies go round-robin over the anomalies (in a seeded order); pass `r`
/// uses shift `[0, +1, -1, +2, -2, ...][r]`. A shifted copy is re-cut from
/// `source` and kept only if it is in bounds and its new last frame is still
/// anomalous; otherwise the unshifted window is replicated.
pub fn oversample(
    samples: &[WindowSample],
    source: &SeriesTable,
    disc: &Discretizer,
    cfg: &OversampleConfig,
    seed: u64,
) -> Result<Vec<WindowSample>> {
    if !(cfg.target_ratio > 0.0 && cfg.target_ratio < 1.0) {
        bail!(Config, "oversample target ratio must be in (0, 1), got {}", cfg.target_ratio);
    }
    let anomalies: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == 1).collect();
    if anomalies.is_empty() {
        bail!(Data, "no anomalous training windows to oversample");
    }
    let normal = samples.len() - anomalies.len();
    let required = required_anomalies(normal, cfg.target_ratio);
    let mut out = samples.to_vec();
    if anomalies.len() >= required {
        return Ok(out);
    }

    let mut order = anomalies;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut shifts = vec![0isize];
    for d in 1..=cfg.max_shift as isize {
        shifts.push(d);
        shifts.push(-d);
    }

    let w = samples[order[0]].window_len();
    let mut count = order.len();
    let mut c = 0usize;
    while count < required {
        let src = &samples[order[c % order.len()]];
        let delta = shifts[(c / order.len()) % shifts.len()];
        let end = src.t_index as isize + delta;
        let shifted = delta != 0
            && end >= w as isize - 1
            && (end as usize) < source.len()
            && source.labels[end as usize] == 1;
        out.push(if shifted {
            window_at(source, disc, w, end as usize)
        } else {
            src.clone()
        });
        count += 1;
        c += 1;
    }
    Ok(out)
}

/// First `floor(T * fraction)` rows and the rest, in order.
pub fn chrono_split(s: &SeriesTable, train_fraction: f64) -> Result<(SeriesTable, SeriesTable)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        bail!(Config, "train fraction must be in (0, 1), got {}", train_fraction);
    }
    let cut = math::floor(s.len() as f64 * train_fraction) as usize;
    Ok((s.slice(0, cut), s.slice(cut, s.len())))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PipelineConfig {
    pub window: usize,
    pub bins: usize,
    pub train_fraction: f64,
    pub oversample: OversampleConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: 120,
            bins: 64,
            train_fraction: 0.8,
            oversample: OversampleConfig::default(),
        }
    }
}

/// Output of [`prepare`].
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Oversampled training windows.
    pub train: Vec<WindowSample>,
    /// Untouched test windows.
    pub test: Vec<WindowSample>,
    pub standardizer: Standardizer,
    pub discretizer: Discretizer,
    pub train_table: SeriesTable,
    pub test_table: SeriesTable,
}

/// Fits the transforms on the training part of an already split series and
/// produces windows for both parts.
pub fn prepare_split(train: &SeriesTable, test: &SeriesTable, cfg: &PipelineConfig, seed: u64) -> Result<Prepared> {
    let train_filled = interpolate_missing(train)?;
    let test_filled = interpolate_missing(test)?;
    let standardizer = Standardizer::fit(&train_filled);
    let train_z = standardizer.apply(&train_filled)?;
    let test_z = standardizer.apply(&test_filled)?;
    let discretizer = Discretizer::fit(&train_z, cfg.bins)?;
    let train_windows = make_windows(&train_z, cfg.window, &discretizer)?;
    let test_windows = make_windows(&test_z, cfg.window, &discretizer)?;
    let train_windows = oversample(&train_windows, &train_z, &discretizer, &cfg.oversample, seed)?;
    Ok(Prepared {
        train: train_windows,
        test: test_windows,
        standardizer,
        discretizer,
        train_table: train_z,
        test_table: test_z,
    })
}

/// Chronological split followed by [`prepare_split`].
pub fn prepare(table: &SeriesTable, cfg: &PipelineConfig, seed: u64) -> Result<Prepared> {
    let (train, test) = chrono_split(table, cfg.train_fraction)?;
    prepare_split(&train, &test, cfg, seed)
}

/// Windows of a series under transforms fitted elsewhere.
pub fn windows_with(
    table: &SeriesTable,
    standardizer: &Standardizer,
    discretizer: &Discretizer,
    window: usize,
) -> Result<Vec<WindowSample>> {
    let filled = interpolate_missing(table)?;
    let z = standardizer.apply(&filled)?;
    make_windows(&z, window, discretizer)
}
