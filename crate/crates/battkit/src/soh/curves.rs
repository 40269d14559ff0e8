//! Differential voltage and incremental capacity curves.
//!
//! Both curves come from one constant-current charge span resampled onto a
//! uniform charge grid. The voltage is smoothed, forced monotone, and
//! differentiated; the incremental-capacity curve is the masked reciprocal
//! of the differential-voltage curve, so the two satisfy `ic * dv = 1`
//! exactly wherever both are defined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::soh::savgol::savgol_smooth;
use crate::telemetry::{interp_at, ChargeSegment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveConfig {
    /// Grid pitch is this capacity divided by `grid_bins`.
    pub nominal_capacity_ah: f64,
    pub grid_bins: usize,
    pub smooth_window: usize,
    pub smooth_order: usize,
    /// The constant-current span ends where the terminal voltage first
    /// comes within this margin of its final plateau.
    pub cv_epsilon_v: f64,
    /// Bins with smoothed slope below this are masked in the reciprocal.
    pub dv_floor_v_per_ah: f64,
    pub min_bins: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            nominal_capacity_ah: 5.0,
            grid_bins: 200,
            smooth_window: 9,
            smooth_order: 2,
            cv_epsilon_v: 0.005,
            dv_floor_v_per_ah: 1e-6,
            min_bins: 40,
        }
    }
}

/// Differential curves over a uniform charge axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DifferentialCurves {
    /// Charge since segment start, ampere-hours, uniform pitch `dq_ah`.
    pub q: Vec<f64>,
    /// Smoothed, monotone terminal voltage.
    pub voltage: Vec<f64>,
    /// Differential voltage dV/dQ in volts per ampere-hour.
    pub dv_dq: Vec<f64>,
    /// Incremental capacity dQ/dV; `NaN` where masked.
    pub ic_dq_dv: Vec<f64>,
    /// False where the slope sat below the floor and `ic_dq_dv` is masked.
    pub valid: Vec<bool>,
    pub dq_ah: f64,
    pub mean_temperature_c: f64,
    pub mean_c_rate: f64,
    /// Charge throughput of the analyzed constant-current span.
    pub span_ah: f64,
}

/// Build differential curves from a charge segment.
///
/// Only the constant-current span feeds the analysis: the trailing
/// constant-voltage phase compresses into a few grid bins and would distort
/// the derivative near the top.
pub fn differential_curves(segment: &ChargeSegment, config: &CurveConfig) -> Result<DifferentialCurves> {
    if config.grid_bins < 8 || config.nominal_capacity_ah.is_nan() || config.nominal_capacity_ah <= 0.0 {
        return Err(Error::Config("grid needs a positive capacity and at least 8 bins".into()));
    }
    let samples = &segment.samples;
    if samples.len() < 16 {
        return Err(Error::InsufficientData("segment too short for curve analysis".into()));
    }

    // Cumulative charge per sample (trapezoid), then the CV truncation.
    let mut q_at = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    q_at.push(0.0);
    for pair in samples.windows(2) {
        let dt = pair[1].timestamp - pair[0].timestamp;
        acc += 0.5 * (pair[0].pack_current + pair[1].pack_current) * dt / 3600.0;
        q_at.push(acc);
    }
    let v_plateau = samples
        .iter()
        .map(|s| s.pack_voltage)
        .fold(f64::NEG_INFINITY, f64::max);
    let cv_start = samples
        .iter()
        .position(|s| s.pack_voltage >= v_plateau - config.cv_epsilon_v)
        .unwrap_or(samples.len());
    let end = cv_start.max(16).min(samples.len());
    let span_ah = q_at[end - 1];

    let dq = config.nominal_capacity_ah / config.grid_bins as f64;
    let bins = (span_ah / dq).floor() as usize;
    if bins < config.min_bins.max(config.smooth_window + 2) {
        return Err(Error::InsufficientData(format!(
            "constant-current span {span_ah:.3} Ah covers only {bins} grid bins"
        )));
    }

    // Interpolate terminal voltage onto the uniform charge grid. The charge
    // coordinate is non-decreasing by the segment contract (current >= 0).
    let q_slice = &q_at[..end];
    let v_slice: Vec<f64> = samples[..end].iter().map(|s| s.pack_voltage).collect();
    let q: Vec<f64> = (0..bins).map(|k| k as f64 * dq).collect();
    let v_raw: Vec<f64> = q.iter().map(|&qq| interp_at(q_slice, &v_slice, qq)).collect();

    let mut voltage = savgol_smooth(&v_raw, config.smooth_window, config.smooth_order)?;
    // Physical constraint: charging voltage cannot fall with charge.
    for i in 1..voltage.len() {
        if voltage[i] < voltage[i - 1] {
            voltage[i] = voltage[i - 1];
        }
    }

    // Central differences, one-sided at the ends, then a second smoothing
    // pass on the derivative itself.
    let n = voltage.len();
    let mut slope = vec![0.0; n];
    slope[0] = (voltage[1] - voltage[0]) / dq;
    slope[n - 1] = (voltage[n - 1] - voltage[n - 2]) / dq;
    for i in 1..n - 1 {
        slope[i] = (voltage[i + 1] - voltage[i - 1]) / (2.0 * dq);
    }
    let dv_dq = savgol_smooth(&slope, config.smooth_window, config.smooth_order)?;

    let valid: Vec<bool> = dv_dq.iter().map(|&d| d > config.dv_floor_v_per_ah).collect();
    let ic_dq_dv: Vec<f64> = dv_dq
        .iter()
        .zip(&valid)
        .map(|(&d, &ok)| if ok { 1.0 / d } else { f64::NAN })
        .collect();

    Ok(DifferentialCurves {
        q,
        voltage,
        dv_dq,
        ic_dq_dv,
        valid,
        dq_ah: dq,
        mean_temperature_c: segment.mean_temperature_c,
        mean_c_rate: segment.mean_c_rate,
        span_ah,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{segment_charges, GateConfig, TelemetrySample};

    /// Segment with a prescribed terminal-voltage profile at constant 2.5 A.
    fn segment_from_voltage(v_of_q: impl Fn(f64) -> f64) -> ChargeSegment {
        let amps = 2.5;
        let samples: Vec<TelemetrySample> = (0..9000)
            .map(|t| {
                let q = amps * t as f64 / 3600.0;
                TelemetrySample::new(t as f64, amps, v_of_q(q), vec![], vec![25.0])
            })
            .collect();
        let mut segs = segment_charges(&samples, &GateConfig::default());
        assert_eq!(segs.len(), 1);
        segs.remove(0)
    }

    #[test]
    fn quadratic_voltage_gives_exact_linear_derivative() {
        // d/dq of 3.0 + 0.12 q + 0.008 q^2 is 0.12 + 0.016 q; differences
        // of a quadratic are exact and the smoother preserves linear maps.
        let seg = segment_from_voltage(|q| 3.0 + 0.12 * q + 0.008 * q * q);
        let curves = differential_curves(&seg, &CurveConfig::default()).unwrap();
        let w = CurveConfig::default().smooth_window;
        let n = curves.q.len();
        for (i, (qq, dv)) in curves.q.iter().zip(&curves.dv_dq).enumerate() {
            let expect = 0.12 + 0.016 * qq;
            // One-sided differences at the ends leak a small bias into the
            // edge windows; the interior is exact.
            let tol = if i < w || i + w >= n { 1e-3 } else { 1e-6 };
            assert!((dv - expect).abs() < tol, "q {qq}: {dv} vs {expect}");
        }
    }

    #[test]
    fn reciprocal_identity_holds_on_valid_bins() {
        let seg = segment_from_voltage(|q| 3.0 + 0.1 * q + 0.01 * (3.0 * q).sin());
        let curves = differential_curves(&seg, &CurveConfig::default()).unwrap();
        let mut checked = 0;
        for i in 0..curves.q.len() {
            if curves.valid[i] {
                // The acceptance curve is the exact rounded reciprocal, so
                // the product sits within one rounding step of unity.
                assert_eq!(curves.ic_dq_dv[i], 1.0 / curves.dv_dq[i]);
                assert!((curves.ic_dq_dv[i] * curves.dv_dq[i] - 1.0).abs() <= f64::EPSILON);
                checked += 1;
            } else {
                assert!(curves.ic_dq_dv[i].is_nan());
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn cv_tail_is_excluded() {
        // Voltage ramps to 4.2 then holds; held samples add charge but the
        // analyzed span must stop at the plateau entry.
        let seg = segment_from_voltage(|q| (3.0 + 0.3 * q).min(4.2));
        let curves = differential_curves(&seg, &CurveConfig::default()).unwrap();
        let q_plateau = 4.0; // (4.2 - 3.0) / 0.3
        assert!(curves.span_ah <= q_plateau + 0.1, "span {}", curves.span_ah);
        // Well below the plateau the slope is still the ramp's.
        let mid = curves.q.len() / 2;
        assert!((curves.dv_dq[mid] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn flat_voltage_is_masked_not_divided() {
        let seg = segment_from_voltage(|q| if q < 2.0 { 3.0 + 0.2 * q } else { 3.4 });
        let config = CurveConfig {
            cv_epsilon_v: 0.0005,
            ..CurveConfig::default()
        };
        // The plateau truncates the span; whatever flat bins remain before
        // the cut must be masked rather than produce infinities.
        match differential_curves(&seg, &config) {
            Ok(curves) => {
                for (ic, ok) in curves.ic_dq_dv.iter().zip(&curves.valid) {
                    assert!(ic.is_finite() == *ok);
                    if ic.is_finite() {
                        assert!(ic.abs() < 1e7);
                    }
                }
            }
            Err(Error::InsufficientData(_)) => {}
            Err(e) => panic!("unexpected error {e:?}"),
        }
    }

    #[test]
    fn short_segments_are_rejected() {
        let amps = 2.5;
        let samples: Vec<TelemetrySample> = (0..400)
            .map(|t| TelemetrySample::new(t as f64, amps, 3.0 + 1e-4 * t as f64, vec![], vec![25.0]))
            .collect();
        let mut segs = segment_charges(&samples, &GateConfig::default());
        let seg = segs.remove(0);
        assert!(matches!(
            differential_curves(&seg, &CurveConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }
}
