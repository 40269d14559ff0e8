//! Peak extraction and feature naming on differential-voltage curves.
//!
//! Health information lives in where the staging and ordering transitions
//! sit on the charge axis. Peaks are found by prominence, then the
//! strongest peak inside each expected window gets a stable name, and
//! pairwise peak distances are added as shift-invariant features: a
//! constant offset of the charge axis (unknown starting charge, ohmic
//! shift) moves every position equally but no distance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::soh::curves::DifferentialCurves;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakConfig {
    /// Minimum prominence in volts per ampere-hour.
    pub min_prominence: f64,
    /// Peaks closer than this keep only the more prominent one.
    pub min_separation_ah: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            min_prominence: 0.02,
            min_separation_ah: 0.15,
        }
    }
}

/// Expected charge-axis windows for the named transitions, in
/// ampere-hours from the segment start. Calibrated for a full charge
/// started near the discharged state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureWindows {
    /// Low anode staging transition.
    pub a1: (f64, f64),
    /// High anode staging transition.
    pub a2: (f64, f64),
    /// Cathode ordering transition; tracks lithium loss.
    pub c1: (f64, f64),
}

impl Default for FeatureWindows {
    fn default() -> Self {
        Self {
            a1: (0.4, 1.6),
            a2: (2.3, 2.95),
            c1: (3.02, 4.6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Position on the charge axis, ampere-hours.
    pub q_ah: f64,
    /// Curve height at the peak, volts per ampere-hour.
    pub height: f64,
    pub prominence: f64,
}

/// All retained peaks plus named features for the lookup stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveFeatures {
    pub peaks: Vec<Peak>,
    /// Named feature values: `q_a1`, `q_a2`, `q_c1` positions when found,
    /// plus pairwise distances `d_a2_a1`, `d_c1_a1`, `d_c1_a2`.
    pub named: BTreeMap<String, f64>,
    pub mean_temperature_c: f64,
    pub mean_c_rate: f64,
}

/// Find local maxima of `y` over axis `q` and score their prominence.
///
/// Prominence of a peak is its height above the higher of the two deepest
/// valleys separating it from larger terrain (or from the ends). Plateau
/// maxima report their first index. Output is ordered by position.
pub fn find_peaks(q: &[f64], y: &[f64], config: &PeakConfig) -> Result<Vec<Peak>> {
    if q.len() != y.len() {
        return Err(Error::Schema("axis and curve lengths differ".into()));
    }
    if q.len() < 3 {
        return Ok(Vec::new());
    }
    let n = y.len();
    let mut candidates: Vec<usize> = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            // Walk any plateau to its end.
            let start = i;
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[j] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[j] {
                candidates.push(start);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let mut peaks: Vec<Peak> = candidates
        .into_iter()
        .map(|p| {
            // Scan outward to the first strictly higher sample on each
            // side; the prominence base is the higher of the two minima.
            let mut left_min = y[p];
            let mut k = p;
            while k > 0 {
                k -= 1;
                if y[k] > y[p] {
                    break;
                }
                left_min = left_min.min(y[k]);
            }
            let mut right_min = y[p];
            let mut k = p;
            while k + 1 < n {
                k += 1;
                if y[k] > y[p] {
                    break;
                }
                right_min = right_min.min(y[k]);
            }
            Peak {
                q_ah: q[p],
                height: y[p],
                prominence: y[p] - left_min.max(right_min),
            }
        })
        .filter(|p| p.prominence >= config.min_prominence && p.height.is_finite())
        .collect();

    // Enforce separation, keeping the more prominent peak of any close pair.
    peaks.sort_by(|a, b| b.prominence.total_cmp(&a.prominence).then(a.q_ah.total_cmp(&b.q_ah)));
    let mut kept: Vec<Peak> = Vec::new();
    for p in peaks {
        if kept.iter().all(|k| (k.q_ah - p.q_ah).abs() >= config.min_separation_ah) {
            kept.push(p);
        }
    }
    kept.sort_by(|a, b| a.q_ah.total_cmp(&b.q_ah));
    Ok(kept)
}

/// Extract named features from a differential-voltage curve.
pub fn extract_features(
    curves: &DifferentialCurves,
    windows: &FeatureWindows,
    peaks: &PeakConfig,
) -> Result<CurveFeatures> {
    let found = find_peaks(&curves.q, &curves.dv_dq, peaks)?;
    let mut named = BTreeMap::new();
    let mut pick = |name: &str, (lo, hi): (f64, f64)| -> Option<f64> {
        let best = found
            .iter()
            .filter(|p| p.q_ah >= lo && p.q_ah <= hi)
            .max_by(|a, b| a.prominence.total_cmp(&b.prominence))?;
        named.insert(format!("q_{name}"), best.q_ah);
        Some(best.q_ah)
    };
    let a1 = pick("a1", windows.a1);
    let a2 = pick("a2", windows.a2);
    let c1 = pick("c1", windows.c1);
    if let (Some(a1), Some(a2)) = (a1, a2) {
        named.insert("d_a2_a1".into(), a2 - a1);
    }
    if let (Some(a1), Some(c1)) = (a1, c1) {
        named.insert("d_c1_a1".into(), c1 - a1);
    }
    if let (Some(a2), Some(c1)) = (a2, c1) {
        named.insert("d_c1_a2".into(), c1 - a2);
    }
    Ok(CurveFeatures {
        peaks: found,
        named,
        mean_temperature_c: curves.mean_temperature_c,
        mean_c_rate: curves.mean_c_rate,
    })
}
