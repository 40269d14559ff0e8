//! Telemetry ingestion and preparation.
//!
//! Raw pack logs arrive as CSV or JSONL. This module parses them into
//! [`TelemetrySample`]s, flags or drops physically impossible values,
//! recovers charging segments, and slices per-sensor signal windows for the
//! shape-based thermal monitor.
//!
//! Sign convention: charging current is positive throughout the crate.

mod clean;
mod ingest;
mod segment;
mod window;

pub use clean::{clean, CleanReport, LimitsConfig};
pub use ingest::{
    detect_format, ingest_file, write_csv, write_jsonl, FileFormat, IngestReport, SchemaConfig,
    TimestampFormat,
};
pub use segment::{segment_charges, ChargeSegment, GateConfig};
pub use window::{
    interp_at, resample_series, window_signals, SensorSelector, SignalWindow, WindowingConfig,
};

use serde::{Deserialize, Serialize};

/// One telemetry record. Timestamps are epoch seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub timestamp: f64,
    /// Pack current in amperes, positive while charging.
    pub pack_current: f64,
    /// Pack terminal voltage in volts.
    pub pack_voltage: f64,
    /// Per-cell voltages in volts; may be empty for pack-only logs.
    #[serde(default)]
    pub cell_voltages: Vec<f64>,
    /// Temperature probe readings in degrees Celsius.
    #[serde(default)]
    pub temperatures: Vec<f64>,
    /// Per-field validity; fields flagged invalid are never consumed
    /// downstream.
    #[serde(default, skip_serializing_if = "QualityFlags::is_default")]
    pub flags: QualityFlags,
}

impl TelemetrySample {
    pub fn new(
        timestamp: f64,
        pack_current: f64,
        pack_voltage: f64,
        cell_voltages: Vec<f64>,
        temperatures: Vec<f64>,
    ) -> Self {
        let flags = QualityFlags::all_valid(cell_voltages.len(), temperatures.len());
        Self {
            timestamp,
            pack_current,
            pack_voltage,
            cell_voltages,
            temperatures,
            flags,
        }
    }

    /// Mean over temperature probes whose validity bit is set.
    pub fn mean_temperature(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, &t) in self.temperatures.iter().enumerate() {
            if self.flags.temperature(i) {
                sum += t;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Per-field validity bits for one sample. `true` means usable.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QualityFlags {
    /// Set when the current reading failed limits or parsing.
    #[serde(default)]
    pub bad_pack_current: bool,
    #[serde(default)]
    pub bad_pack_voltage: bool,
    /// Indices of invalid cell-voltage entries.
    #[serde(default)]
    pub bad_cell_voltages: Vec<usize>,
    /// Indices of invalid temperature entries.
    #[serde(default)]
    pub bad_temperatures: Vec<usize>,
}

impl QualityFlags {
    pub fn all_valid(_cells: usize, _temps: usize) -> Self {
        Self::default()
    }

    fn is_default(&self) -> bool {
        !self.bad_pack_current
            && !self.bad_pack_voltage
            && self.bad_cell_voltages.is_empty()
            && self.bad_temperatures.is_empty()
    }

    pub fn pack_current(&self) -> bool {
        !self.bad_pack_current
    }

    pub fn pack_voltage(&self) -> bool {
        !self.bad_pack_voltage
    }

    pub fn cell_voltage(&self, i: usize) -> bool {
        !self.bad_cell_voltages.contains(&i)
    }

    pub fn temperature(&self, i: usize) -> bool {
        !self.bad_temperatures.contains(&i)
    }
}
