//! Capacity-health estimation from slow-charge voltage curves.
//!
//! A full slow charge traces the cell's equilibrium voltage closely
//! enough that its derivative against charge throughput still shows the
//! electrode phase transitions. The pipeline is:
//!
//! 1. [`differential_curves`] resamples a charge segment onto a uniform
//!    charge grid and forms smoothed dV/dQ and dQ/dV curves.
//! 2. [`extract_features`] finds the transition peaks and names their
//!    positions and pairwise distances.
//! 3. [`build_lut`] fits per-temperature linear maps from those features
//!    to measured capacity over a calibration set, and [`SohLut::estimate`]
//!    fuses the per-feature predictions for new segments.
//!
//! Segments must pass [`SohLut::gate`] before estimation: fast or partial
//! charges blur and truncate the peaks, so the gate refuses them rather
//! than returning a silently degraded number.

mod curves;
mod features;
mod lut;
mod savgol;

pub use curves::{differential_curves, CurveConfig, DifferentialCurves};
pub use features::{
    extract_features, find_peaks, CurveFeatures, FeatureWindows, Peak, PeakConfig,
};
pub use lut::{
    build_lut, calibration_from_fleet, CalibrationPoint, FeatureFit, GateDecision, LutConfig,
    SohEstimate, SohLut, LUT_FORMAT_VERSION,
};
pub use savgol::savgol_smooth;
