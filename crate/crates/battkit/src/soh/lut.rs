//! Calibrated lookup from curve features to capacity.
//!
//! Each named feature is fit against measured capacity with an ordinary
//! linear regression, separately per temperature bin, because peak
//! positions drift mildly with temperature. Fits that do not explain the
//! calibration data (low R squared) are dropped rather than down-weighted:
//! a feature that cannot rank the calibration cells has no business voting
//! on a field cell. Surviving fits vote with inverse residual-variance
//! weights, so the features that tracked capacity most tightly in
//! calibration dominate the fused estimate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::soh::curves::{differential_curves, CurveConfig};
use crate::soh::features::{extract_features, CurveFeatures, FeatureWindows, PeakConfig};
use crate::telemetry::ChargeSegment;

pub const LUT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LutConfig {
    pub nominal_capacity_ah: f64,
    /// Bin centers, degrees Celsius, ascending.
    pub temperature_bins_c: Vec<f64>,
    /// Calibration points farther than this from every bin center are unused.
    pub bin_half_width_c: f64,
    /// Fits explaining less variance than this are discarded.
    pub min_r2: f64,
    pub min_points_per_fit: usize,
    pub windows: FeatureWindows,
    pub peaks: PeakConfig,
    pub curve: CurveConfig,
    /// Gate: fast charges blur the transitions beyond use.
    pub max_c_rate: f64,
    /// Gate: fraction of nominal capacity the segment must deliver.
    pub min_throughput_fraction: f64,
    /// Gate: the charge must start near the discharged state, or every
    /// peak window is shifted by the unknown initial charge.
    pub max_start_voltage_v: f64,
    /// Gate: the charge must reach the constant-voltage phase.
    pub min_end_voltage_v: f64,
    pub min_temperature_c: f64,
    pub max_temperature_c: f64,
}

impl Default for LutConfig {
    fn default() -> Self {
        Self {
            nominal_capacity_ah: 5.0,
            temperature_bins_c: vec![10.0, 25.0, 40.0],
            bin_half_width_c: 7.5,
            min_r2: 0.8,
            min_points_per_fit: 4,
            windows: FeatureWindows::default(),
            peaks: PeakConfig::default(),
            curve: CurveConfig::default(),
            max_c_rate: 0.5,
            min_throughput_fraction: 0.7,
            max_start_voltage_v: 3.45,
            min_end_voltage_v: 4.1,
            min_temperature_c: -5.0,
            max_temperature_c: 50.0,
        }
    }
}

/// One linear map from a feature value to capacity inside one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFit {
    pub feature: String,
    pub temperature_c: f64,
    /// capacity_ah = intercept + slope * value
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Unbiased residual variance of the fit, (Ah)^2.
    pub residual_variance: f64,
    pub n: usize,
    /// Feature value span seen during calibration.
    pub value_min: f64,
    pub value_max: f64,
}

/// One labelled calibration observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub features: CurveFeatures,
    pub capacity_ah: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SohLut {
    pub version: u32,
    pub config: LutConfig,
    pub fits: Vec<FeatureFit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureContribution {
    pub feature: String,
    pub value: f64,
    pub capacity_ah: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SohEstimate {
    pub soh_pct: f64,
    pub capacity_ah: f64,
    pub contributions: Vec<FeatureContribution>,
    /// Segment temperature fell outside the calibrated bin span.
    pub extrapolated_temperature: bool,
    /// Fewer than two features voted; treat with suspicion.
    pub low_confidence: bool,
}

/// Outcome of the pre-estimation admission check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateDecision {
    pub accepted: bool,
    /// One entry per violated rule; empty when accepted.
    pub reasons: Vec<String>,
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        // Degenerate spread on either axis; nothing to learn.
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let r2 = 1.0 - ss_res / syy;
    let dof = (xs.len() as f64 - 2.0).max(1.0);
    Some((slope, intercept, r2, ss_res / dof))
}

/// Fit the per-bin feature-to-capacity maps over a calibration set.
///
/// Fails if no (feature, bin) pair yields an acceptable fit; a lookup
/// table with nothing in it would turn every later estimate into an error
/// anyway, and failing here names the real problem.
pub fn build_lut(points: &[CalibrationPoint], config: &LutConfig) -> Result<SohLut> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no calibration points".into()));
    }
    let mut feature_names: Vec<String> = Vec::new();
    for p in points {
        for name in p.features.named.keys() {
            if !feature_names.iter().any(|f| f == name) {
                feature_names.push(name.clone());
            }
        }
    }

    let mut fits = Vec::new();
    for &bin_c in &config.temperature_bins_c {
        let in_bin: Vec<&CalibrationPoint> = points
            .iter()
            .filter(|p| (p.features.mean_temperature_c - bin_c).abs() <= config.bin_half_width_c)
            .collect();
        for name in &feature_names {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for p in &in_bin {
                if let Some(&v) = p.features.named.get(name) {
                    xs.push(v);
                    ys.push(p.capacity_ah);
                }
            }
            if xs.len() < config.min_points_per_fit {
                continue;
            }
            let Some((slope, intercept, r2, residual_variance)) = linear_fit(&xs, &ys) else {
                continue;
            };
            if !r2.is_finite() || r2 < config.min_r2 {
                continue;
            }
            fits.push(FeatureFit {
                feature: name.clone(),
                temperature_c: bin_c,
                slope,
                intercept,
                r2,
                residual_variance,
                n: xs.len(),
                value_min: xs.iter().cloned().fold(f64::INFINITY, f64::min),
                value_max: xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    if fits.is_empty() {
        return Err(Error::Calibration(
            "no feature passed the fit quality threshold in any temperature bin".into(),
        ));
    }
    Ok(SohLut {
        version: LUT_FORMAT_VERSION,
        config: config.clone(),
        fits,
    })
}

impl SohLut {
    /// Admission check. Returns the full list of violations so an operator
    /// can fix the charging procedure, not just the first complaint.
    pub fn gate(&self, segment: &ChargeSegment) -> GateDecision {
        let c = &self.config;
        let mut reasons = Vec::new();
        if segment.mean_c_rate > c.max_c_rate {
            reasons.push(format!(
                "mean rate {:.3}C exceeds {:.3}C; transitions smear at speed",
                segment.mean_c_rate, c.max_c_rate
            ));
        }
        let min_throughput = c.min_throughput_fraction * c.nominal_capacity_ah;
        if segment.charge_throughput_ah < min_throughput {
            reasons.push(format!(
                "throughput {:.2} Ah below {:.2} Ah; charge looks partial",
                segment.charge_throughput_ah, min_throughput
            ));
        }
        let start_v = segment
            .samples
            .iter()
            .find(|s| s.flags.pack_voltage())
            .map(|s| s.pack_voltage);
        match start_v {
            Some(v) if v > c.max_start_voltage_v => reasons.push(format!(
                "start voltage {v:.3} V above {:.3} V; charge did not start near empty",
                c.max_start_voltage_v
            )),
            None => reasons.push("no valid voltage samples".into()),
            _ => {}
        }
        let end_v = segment
            .samples
            .iter()
            .filter(|s| s.flags.pack_voltage())
            .map(|s| s.pack_voltage)
            .fold(f64::NEG_INFINITY, f64::max);
        if end_v.is_finite() && end_v < c.min_end_voltage_v {
            reasons.push(format!(
                "peak voltage {end_v:.3} V below {:.3} V; charge did not complete",
                c.min_end_voltage_v
            ));
        }
        if segment.mean_temperature_c < c.min_temperature_c
            || segment.mean_temperature_c > c.max_temperature_c
        {
            reasons.push(format!(
                "mean temperature {:.1} C outside [{:.1}, {:.1}]",
                segment.mean_temperature_c, c.min_temperature_c, c.max_temperature_c
            ));
        }
        GateDecision {
            accepted: reasons.is_empty(),
            reasons,
        }
    }

    fn fits_for(&self, feature: &str) -> Vec<&FeatureFit> {
        let mut fits: Vec<&FeatureFit> =
            self.fits.iter().filter(|f| f.feature == feature).collect();
        fits.sort_by(|a, b| a.temperature_c.total_cmp(&b.temperature_c));
        fits
    }

    /// Predict capacity and health from one segment's curve features.
    ///
    /// Per feature, the capacity prediction (and its variance) is linearly
    /// interpolated between the two calibrated bins bracketing the segment
    /// temperature; outside the calibrated span the nearest bin is used
    /// and the estimate is flagged. Votes fuse by inverse variance.
    pub fn estimate(&self, features: &CurveFeatures) -> Result<SohEstimate> {
        let t = features.mean_temperature_c;
        let mut contributions = Vec::new();
        let mut extrapolated = false;

        for (name, &value) in &features.named {
            let fits = self.fits_for(name);
            if fits.is_empty() {
                continue;
            }
            let (cap, var) = if t <= fits[0].temperature_c {
                if t < fits[0].temperature_c - self.config.bin_half_width_c {
                    extrapolated = true;
                }
                (predict(fits[0], value), fits[0].residual_variance)
            } else if t >= fits[fits.len() - 1].temperature_c {
                let last = fits[fits.len() - 1];
                if t > last.temperature_c + self.config.bin_half_width_c {
                    extrapolated = true;
                }
                (predict(last, value), last.residual_variance)
            } else {
                let hi = fits.iter().position(|f| f.temperature_c >= t).unwrap();
                let (a, b) = (fits[hi - 1], fits[hi]);
                let w = (t - a.temperature_c) / (b.temperature_c - a.temperature_c);
                (
                    (1.0 - w) * predict(a, value) + w * predict(b, value),
                    (1.0 - w) * a.residual_variance + w * b.residual_variance,
                )
            };
            if !cap.is_finite() {
                continue;
            }
            contributions.push(FeatureContribution {
                feature: name.clone(),
                value,
                capacity_ah: cap,
                weight: 1.0 / var.max(1e-9),
            });
        }

        if contributions.is_empty() {
            return Err(Error::Estimation(
                "no calibrated feature present in this segment".into(),
            ));
        }
        let wsum: f64 = contributions.iter().map(|c| c.weight).sum();
        let capacity_ah =
            contributions.iter().map(|c| c.weight * c.capacity_ah).sum::<f64>() / wsum;
        contributions.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        let low_confidence = contributions.len() < 2;
        Ok(SohEstimate {
            soh_pct: 100.0 * capacity_ah / self.config.nominal_capacity_ah,
            capacity_ah,
            contributions,
            extrapolated_temperature: extrapolated,
            low_confidence,
        })
    }

    /// Gate, build curves, extract features, estimate: the full path from
    /// a raw segment. Refused segments return [`Error::Gated`].
    pub fn estimate_segment(&self, segment: &ChargeSegment) -> Result<SohEstimate> {
        let decision = self.gate(segment);
        if !decision.accepted {
            return Err(Error::Gated(decision.reasons.join("; ")));
        }
        let curves = differential_curves(segment, &self.config.curve)?;
        let features = extract_features(&curves, &self.config.windows, &self.config.peaks)?;
        self.estimate(&features)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let lut: Self = serde_json::from_str(&text)?;
        if lut.version != LUT_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "lookup table format {}, expected {LUT_FORMAT_VERSION}",
                lut.version
            )));
        }
        Ok(lut)
    }
}

fn predict(fit: &FeatureFit, value: f64) -> f64 {
    fit.intercept + fit.slope * value
}

/// Run every charge in a fleet manifest through the curve and feature
/// stages and label it with the manifest's true capacity, producing the
/// calibration set for [`build_lut`]. Entries whose longest segment fails
/// the admission gate are skipped, not errors: a calibration campaign may
/// legitimately contain junk cycles.
pub fn calibration_from_fleet(
    manifest: &crate::synth::FleetManifest,
    dir: &Path,
    config: &LutConfig,
) -> Result<Vec<CalibrationPoint>> {
    use crate::synth::ManifestEntry;
    use crate::telemetry::{
        clean, ingest_file, segment_charges, GateConfig, LimitsConfig, SchemaConfig,
    };

    let probe = SohLut {
        version: LUT_FORMAT_VERSION,
        config: config.clone(),
        fits: Vec::new(),
    };
    let mut points = Vec::new();
    for entry in &manifest.entries {
        let ManifestEntry::Charge {
            path,
            true_capacity_ah,
            ..
        } = entry
        else {
            continue;
        };
        let (samples, _) = ingest_file(&dir.join(path), &SchemaConfig::default())?;
        let (cleaned, _) = clean(&samples, &LimitsConfig::default());
        let gate = GateConfig {
            nominal_capacity_ah: config.nominal_capacity_ah,
            ..GateConfig::default()
        };
        let segments = segment_charges(&cleaned, &gate);
        let Some(segment) = segments
            .into_iter()
            .max_by(|a, b| a.charge_throughput_ah.total_cmp(&b.charge_throughput_ah))
        else {
            continue;
        };
        if !probe.gate(&segment).accepted {
            continue;
        }
        let curves = differential_curves(&segment, &config.curve)?;
        let features = extract_features(&curves, &config.windows, &config.peaks)?;
        points.push(CalibrationPoint {
            features,
            capacity_ah: *true_capacity_ah,
        });
    }
    Ok(points)
}
