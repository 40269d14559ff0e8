use serde::{Deserialize, Serialize};

use super::window::interp_at;
use super::TelemetrySample;
use crate::error::{Error, Result};

/// Charge-detection gate.
///
/// A segment opens when current stays above `charge_threshold_c` (as a
/// fraction of nominal capacity) for at least `sustain_s`, and closes when
/// no above-threshold sample arrives for `max_gap_s`. Segments shorter than
/// `min_duration_s` or carrying less than `min_throughput_ah` are discarded.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub nominal_capacity_ah: f64,
    pub charge_threshold_c: f64,
    pub sustain_s: f64,
    pub max_gap_s: f64,
    pub min_duration_s: f64,
    pub min_throughput_ah: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            nominal_capacity_ah: 5.0,
            charge_threshold_c: 0.02,
            sustain_s: 60.0,
            max_gap_s: 300.0,
            min_duration_s: 300.0,
            min_throughput_ah: 0.05,
        }
    }
}

/// A contiguous charging event.
///
/// Invariants: retained samples have a valid, non-negative pack current;
/// `charge_throughput_ah` is the trapezoidal integral of current over the
/// retained samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChargeSegment {
    pub samples: Vec<TelemetrySample>,
    pub charge_throughput_ah: f64,
    /// Mean current over the segment divided by nominal capacity.
    pub mean_c_rate: f64,
    /// Mean over all valid temperature readings in the segment.
    pub mean_temperature_c: f64,
    /// Index range into the cleaned source slice, end exclusive.
    pub source_range: (usize, usize),
    pub nominal_capacity_ah: f64,
}

impl ChargeSegment {
    pub fn duration_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }

    /// Pack signals interpolated onto a uniform grid. Each signal uses only
    /// samples whose validity bit for that field is set; grid points outside
    /// a field's valid span take the nearest valid value.
    pub fn resampled(&self, dt_s: f64) -> Result<ResampledSegment> {
        if dt_s <= 0.0 || !dt_s.is_finite() {
            return Err(Error::Config(format!("resample dt must be positive, got {dt_s}")));
        }
        let t0 = self
            .samples
            .first()
            .ok_or_else(|| Error::EmptyInput("segment has no samples".into()))?
            .timestamp;
        let t_end = self.samples.last().unwrap().timestamp;
        let n = ((t_end - t0) / dt_s).floor() as usize + 1;

        let series = |pick: &dyn Fn(&TelemetrySample) -> Option<f64>| -> Result<Vec<f64>> {
            let mut ts = Vec::new();
            let mut vs = Vec::new();
            for s in &self.samples {
                if let Some(v) = pick(s) {
                    ts.push(s.timestamp);
                    vs.push(v);
                }
            }
            if ts.len() < 2 {
                return Err(Error::InsufficientData(
                    "fewer than 2 valid points for resampling".into(),
                ));
            }
            Ok((0..n).map(|i| interp_at(&ts, &vs, t0 + i as f64 * dt_s)).collect())
        };

        Ok(ResampledSegment {
            t0,
            dt_s,
            current: series(&|s| s.flags.pack_current().then_some(s.pack_current))?,
            voltage: series(&|s| s.flags.pack_voltage().then_some(s.pack_voltage))?,
            temperature: series(&|s| s.mean_temperature())?,
        })
    }
}

/// Uniformly sampled pack signals for one segment.
#[derive(Debug, Clone)]
pub struct ResampledSegment {
    pub t0: f64,
    pub dt_s: f64,
    pub current: Vec<f64>,
    pub voltage: Vec<f64>,
    pub temperature: Vec<f64>,
}

impl ResampledSegment {
    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt_s
    }
}

fn trapezoid_ah(samples: &[TelemetrySample]) -> f64 {
    samples
        .windows(2)
        .map(|w| {
            (w[0].pack_current + w[1].pack_current) * 0.5 * (w[1].timestamp - w[0].timestamp)
                / 3600.0
        })
        .sum()
}

/// Detect charging segments in cleaned, time-ordered samples.
///
/// Total function: undetectable or sub-gate activity yields an empty list,
/// never an error. Samples with an invalid or negative current reading are
/// excluded from the retained segment.
pub fn segment_charges(samples: &[TelemetrySample], gate: &GateConfig) -> Vec<ChargeSegment> {
    let threshold_a = gate.charge_threshold_c * gate.nominal_capacity_ah;
    let mut segments = Vec::new();

    // Above-threshold run being evaluated for segment start.
    let mut run_start: Option<usize> = None;
    // Open segment: (start index, index and time of last above-threshold sample).
    let mut open: Option<(usize, usize, f64)> = None;

    let close = |segments: &mut Vec<ChargeSegment>, start: usize, end_inclusive: usize| {
        let retained: Vec<TelemetrySample> = samples[start..=end_inclusive]
            .iter()
            .filter(|s| s.flags.pack_current() && s.pack_current >= 0.0)
            .cloned()
            .collect();
        if retained.len() < 2 {
            return;
        }
        let duration = retained.last().unwrap().timestamp - retained.first().unwrap().timestamp;
        let throughput = trapezoid_ah(&retained);
        if duration < gate.min_duration_s || throughput < gate.min_throughput_ah {
            return;
        }
        let temps: Vec<f64> = retained.iter().filter_map(|s| s.mean_temperature()).collect();
        let mean_temperature_c = if temps.is_empty() {
            f64::NAN
        } else {
            temps.iter().sum::<f64>() / temps.len() as f64
        };
        let mean_current = throughput * 3600.0 / duration;
        segments.push(ChargeSegment {
            samples: retained,
            charge_throughput_ah: throughput,
            mean_c_rate: mean_current / gate.nominal_capacity_ah,
            mean_temperature_c,
            source_range: (start, end_inclusive + 1),
            nominal_capacity_ah: gate.nominal_capacity_ah,
        });
    };

    for (k, s) in samples.iter().enumerate() {
        let charging = s.flags.pack_current() && s.pack_current > threshold_a;
        if charging {
            if let Some((_, last_idx, last_t)) = open.as_mut() {
                *last_idx = k;
                *last_t = s.timestamp;
            } else {
                let start = *run_start.get_or_insert(k);
                if s.timestamp - samples[start].timestamp >= gate.sustain_s {
                    open = Some((start, k, s.timestamp));
                }
            }
        } else {
            run_start = None;
            if let Some((start, last_idx, last_t)) = open {
                if s.timestamp - last_t > gate.max_gap_s {
                    close(&mut segments, start, last_idx);
                    open = None;
                }
            }
        }
    }
    if let Some((start, last_idx, _)) = open {
        close(&mut segments, start, last_idx);
    }
    segments
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Constant-current synthetic trace: `spans` is (start_s, end_s, amps).
    fn trace(spans: &[(f64, f64, f64)], dt: f64, horizon: f64) -> Vec<TelemetrySample> {
        let mut out = Vec::new();
        let mut t = 0.0;
        while t <= horizon {
            let i = spans
                .iter()
                .find(|(a, b, _)| t >= *a && t < *b)
                .map(|(_, _, amps)| *amps)
                .unwrap_or(0.0);
            out.push(TelemetrySample::new(t, i, 3.7, vec![3.7], vec![25.0]));
            t += dt;
        }
        out
    }

    #[test]
    fn two_charges_with_long_rest_become_two_segments() {
        let samples = trace(&[(100.0, 3000.0, 2.5), (10200.0, 13000.0, 2.5)], 1.0, 14000.0);
        let segments = segment_charges(&samples, &GateConfig::default());
        assert_eq!(segments.len(), 2);
        assert!((segments[0].charge_throughput_ah - 2.5 * 2899.0 / 3600.0).abs() < 1e-6);
        assert!((segments[0].mean_c_rate - 0.5).abs() < 1e-3);
    }

    #[test]
    fn short_gap_does_not_split_a_segment() {
        let samples = trace(&[(0.0, 2000.0, 2.5), (2100.0, 4000.0, 2.5)], 1.0, 4100.0);
        let segments = segment_charges(&samples, &GateConfig::default());
        assert_eq!(segments.len(), 1);
    }

    #[test]
    fn blips_shorter_than_sustain_are_ignored() {
        let samples = trace(&[(100.0, 130.0, 2.5), (500.0, 520.0, 2.5)], 1.0, 1000.0);
        let segments = segment_charges(&samples, &GateConfig::default());
        assert!(segments.is_empty());
    }

    #[test]
    fn throughput_matches_trapezoid_of_retained_samples() {
        // Ramped current so the trapezoid differs from a rectangle rule.
        let mut samples = Vec::new();
        for k in 0..=3600 {
            let t = k as f64;
            let i = 1.0 + 1.5 * t / 3600.0;
            samples.push(TelemetrySample::new(t, i, 3.8, vec![], vec![25.0]));
        }
        let segments = segment_charges(&samples, &GateConfig::default());
        assert_eq!(segments.len(), 1);
        let seg = &segments[0];

        let mut independent = 0.0;
        for w in seg.samples.windows(2) {
            independent +=
                (w[0].pack_current + w[1].pack_current) * 0.5 * (w[1].timestamp - w[0].timestamp);
        }
        independent /= 3600.0;
        assert!((seg.charge_throughput_ah - independent).abs() <= 1e-9 * independent.abs());

        // Rectangle rule at the native step disagrees, but converges when the
        // step is halved; the trapezoid sits between the two.
        let rect: f64 = seg
            .samples
            .windows(2)
            .map(|w| w[0].pack_current * (w[1].timestamp - w[0].timestamp) / 3600.0)
            .sum();
        assert!((seg.charge_throughput_ah - rect).abs() > 1e-7);
        let fine: f64 = (0..2 * 3600)
            .map(|k| {
                let t = k as f64 * 0.5;
                (1.0 + 1.5 * t / 3600.0) * 0.5 / 3600.0
            })
            .sum();
        assert!((seg.charge_throughput_ah - fine).abs() / fine < 1e-4);
    }

    #[test]
    fn negative_current_samples_are_not_retained() {
        let mut samples = trace(&[(0.0, 2000.0, 2.5)], 1.0, 2000.0);
        samples[500].pack_current = -0.3;
        let segments = segment_charges(&samples, &GateConfig::default());
        assert_eq!(segments.len(), 1);
        assert!(segments[0].samples.iter().all(|s| s.pack_current >= 0.0));
    }

    #[test]
    fn sub_gate_activity_yields_empty_list() {
        let samples = trace(&[(0.0, 200.0, 0.05)], 1.0, 300.0);
        assert!(segment_charges(&samples, &GateConfig::default()).is_empty());
        assert!(segment_charges(&[], &GateConfig::default()).is_empty());
    }

    #[test]
    fn resampled_segment_covers_span() {
        let samples = trace(&[(0.0, 1000.0, 2.5)], 1.0, 1000.0);
        let segments = segment_charges(&samples, &GateConfig::default());
        let rs = segments[0].resampled(2.0).unwrap();
        assert_eq!(rs.len(), rs.voltage.len());
        assert_eq!(rs.len(), rs.temperature.len());
        assert!((rs.time_at(rs.len() - 1) - 1000.0).abs() <= 2.0);
        assert!(rs.current.iter().all(|&i| (i - 2.5).abs() < 1e-9));
    }
}
