//! Input construction and labeling for the state-of-charge estimator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{FleetManifest, ManifestEntry};
use crate::telemetry::{clean, ingest_file, interp_at, LimitsConfig, TelemetrySample};

/// Temporal layout of one estimator input.
///
/// The network sees the present measurement triple (voltage, current,
/// temperature) plus `history` earlier triples spaced `stride_s` apart, so
/// the input dimension is `3 * (history + 1)`. The stride is part of the
/// model: inputs are interpolated onto it regardless of the logger's native
/// sampling rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub history: usize,
    pub stride_s: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            history: 4,
            stride_s: 30.0,
        }
    }
}

impl FeatureConfig {
    pub fn input_dim(&self) -> usize {
        3 * (self.history + 1)
    }
}

/// One estimator input row, anchored to the sample it was built from.
#[derive(Debug, Clone)]
pub struct FeatureRow {
    /// Timestamp of the present (most recent) triple.
    pub timestamp: f64,
    /// Index of that sample in the source slice.
    pub sample_index: usize,
    /// Layout: `[v(t), i(t), temp(t), v(t-s), i(t-s), temp(t-s), ...]`.
    pub values: Vec<f64>,
}

/// Trapezoidal charge integration of the measured current.
///
/// Returns state of charge in percent per sample, clamped to [0, 100].
/// `capacity_ah` anchors the percent scale, `start_soc_pct` the offset.
/// Positive current charges; timestamps must be non-decreasing and every
/// current reading must be finite and flagged valid.
pub fn coulomb_count(
    samples: &[TelemetrySample],
    capacity_ah: f64,
    start_soc_pct: f64,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to integrate".into()));
    }
    if capacity_ah.is_nan() || capacity_ah <= 0.0 {
        return Err(Error::Domain(format!("capacity must be positive, got {capacity_ah}")));
    }
    let mut soc = Vec::with_capacity(samples.len());
    let mut acc = start_soc_pct.clamp(0.0, 100.0);
    soc.push(acc);
    for pair in samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if !(a.pack_current.is_finite() && b.pack_current.is_finite())
            || !a.flags.pack_current()
            || !b.flags.pack_current()
        {
            return Err(Error::Domain(
                "coulomb counting requires valid current on every sample".into(),
            ));
        }
        let dt = b.timestamp - a.timestamp;
        if dt < 0.0 {
            return Err(Error::Domain("timestamps must be non-decreasing".into()));
        }
        let dq_ah = 0.5 * (a.pack_current + b.pack_current) * dt / 3600.0;
        acc = (acc + dq_ah / capacity_ah * 100.0).clamp(0.0, 100.0);
        soc.push(acc);
    }
    Ok(soc)
}

/// Per-channel series of (time, value) with invalid entries dropped.
struct Channel {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Channel {
    fn collect(samples: &[TelemetrySample], get: impl Fn(&TelemetrySample) -> Option<f64>) -> Self {
        let mut times = Vec::with_capacity(samples.len());
        let mut values = Vec::with_capacity(samples.len());
        for s in samples {
            if let Some(v) = get(s) {
                if v.is_finite() {
                    times.push(s.timestamp);
                    values.push(v);
                }
            }
        }
        Self { times, values }
    }

    fn covers(&self, t: f64) -> bool {
        !self.times.is_empty() && t >= self.times[0] && t <= self.times[self.times.len() - 1]
    }

    fn at(&self, t: f64) -> f64 {
        interp_at(&self.times, &self.values, t)
    }
}

/// Build estimator inputs for every sample whose full lag window is covered
/// by valid data on all three channels. Lagged values are linearly
/// interpolated, so irregular logging rates are tolerated.
pub fn build_features(samples: &[TelemetrySample], config: &FeatureConfig) -> Result<Vec<FeatureRow>> {
    if config.stride_s <= 0.0 {
        return Err(Error::Config("feature stride must be positive".into()));
    }
    let volts = Channel::collect(samples, |s| s.flags.pack_voltage().then_some(s.pack_voltage));
    let amps = Channel::collect(samples, |s| s.flags.pack_current().then_some(s.pack_current));
    let temps = Channel::collect(samples, |s| s.mean_temperature());
    let span = config.history as f64 * config.stride_s;

    let mut rows = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let t = s.timestamp;
        let oldest = t - span;
        if ![&volts, &amps, &temps]
            .iter()
            .all(|c| c.covers(t) && c.covers(oldest))
        {
            continue;
        }
        let mut x = Vec::with_capacity(config.input_dim());
        for k in 0..=config.history {
            let tk = t - k as f64 * config.stride_s;
            x.push(volts.at(tk));
            x.push(amps.at(tk));
            x.push(temps.at(tk));
        }
        rows.push(FeatureRow {
            timestamp: t,
            sample_index: i,
            values: x,
        });
    }
    Ok(rows)
}

/// A labeled feature set ready for training.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) {
        self.features.push(x);
        self.labels.push(y);
    }
}

/// Assemble a labeled dataset from every charge file in a fleet manifest.
///
/// Labels are coulomb counts of the logged current anchored by the
/// registered true capacity and starting state of charge, so they reproduce
/// the simulator's hidden trace up to charger noise. Rows are thinned to at
/// most one per `row_stride_s` seconds per file; high-rate logs would
/// otherwise swamp the trainer with near-duplicate rows.
pub fn dataset_from_fleet(
    manifest: &FleetManifest,
    dir: &Path,
    config: &FeatureConfig,
    row_stride_s: f64,
) -> Result<Dataset> {
    if row_stride_s < 0.0 {
        return Err(Error::Config("row stride must be non-negative".into()));
    }
    let mut out = Dataset::default();
    for entry in &manifest.entries {
        let ManifestEntry::Charge {
            path,
            true_capacity_ah,
            start_soc_pct,
            ..
        } = entry
        else {
            continue;
        };
        let (samples, _) = ingest_file(&dir.join(path), &Default::default())?;
        let (samples, _) = clean(&samples, &LimitsConfig::default());
        let labels = coulomb_count(&samples, *true_capacity_ah, *start_soc_pct)?;
        let mut last_kept = f64::NEG_INFINITY;
        for row in build_features(&samples, config)? {
            if row.timestamp - last_kept < row_stride_s {
                continue;
            }
            last_kept = row.timestamp;
            out.push(row.values, labels[row.sample_index]);
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(
            "fleet produced no labeled feature rows".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, i: f64, v: f64, temp: f64) -> TelemetrySample {
        TelemetrySample::new(t, i, v, vec![], vec![temp])
    }

    #[test]
    fn coulomb_count_matches_linear_ramp() {
        // 1 A constant into 2 Ah for one hour: +50 points.
        let samples: Vec<_> = (0..=3600).map(|t| sample(t as f64, 1.0, 3.8, 25.0)).collect();
        let soc = coulomb_count(&samples, 2.0, 10.0).unwrap();
        assert!((soc[0] - 10.0).abs() < 1e-12);
        assert!((soc[3600] - 60.0).abs() < 1e-9);
        // Trapezoid of a linear current ramp is exact too.
        let ramp: Vec<_> = (0..=3600)
            .map(|t| sample(t as f64, t as f64 / 3600.0, 3.8, 25.0))
            .collect();
        let soc = coulomb_count(&ramp, 2.0, 0.0).unwrap();
        assert!((soc[3600] - 25.0).abs() < 1e-9, "got {}", soc[3600]);
    }

    #[test]
    fn coulomb_count_clamps_at_bounds() {
        let samples: Vec<_> = (0..=7200).map(|t| sample(t as f64, 2.0, 3.8, 25.0)).collect();
        let soc = coulomb_count(&samples, 1.0, 50.0).unwrap();
        assert_eq!(soc[7200], 100.0);
        let discharge: Vec<_> = (0..=7200).map(|t| sample(t as f64, -2.0, 3.8, 25.0)).collect();
        let soc = coulomb_count(&discharge, 1.0, 50.0).unwrap();
        assert_eq!(soc[7200], 0.0);
    }

    #[test]
    fn feature_rows_carry_lagged_triples() {
        // Linear signals make interpolated lags exact and easy to predict.
        let samples: Vec<_> = (0..=100)
            .map(|t| sample(t as f64, 0.1 * t as f64, 3.0 + 0.01 * t as f64, 20.0 + 0.05 * t as f64))
            .collect();
        let config = FeatureConfig {
            history: 2,
            stride_s: 10.0,
        };
        let rows = build_features(&samples, &config).unwrap();
        // Rows start once the 20 s lag window is covered.
        assert_eq!(rows[0].sample_index, 20);
        let r = &rows[10]; // t = 30
        assert_eq!(r.values.len(), 9);
        assert!((r.values[0] - 3.30).abs() < 1e-12); // v(30)
        assert!((r.values[4] - 2.0).abs() < 1e-12); // i(20)
        assert!((r.values[8] - 20.5).abs() < 1e-12); // temp(10)
    }

    #[test]
    fn invalid_samples_do_not_feed_features() {
        let mut samples: Vec<_> = (0..=60).map(|t| sample(t as f64, 1.0, 3.8, 25.0)).collect();
        for s in samples.iter_mut() {
            s.flags.bad_pack_voltage = true;
        }
        let rows = build_features(&samples, &FeatureConfig::default()).unwrap();
        assert!(rows.is_empty(), "voltage channel is entirely invalid");
    }
}
