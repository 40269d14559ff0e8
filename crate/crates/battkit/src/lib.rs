//! Battery telemetry analytics toolkit.
//!
//! The crate covers the full loop from raw pack telemetry to fleet-level
//! health signals:
//!
//! - [`telemetry`] ingests CSV/JSONL logs, cleans them against physical
//!   limits, splits out charging segments, and slices per-sensor windows.
//! - [`soc`] estimates state of charge with a small feed-forward network
//!   trained by Levenberg–Marquardt, plus coulomb counting for ground truth
//!   and an output rate limiter for jitter-free gauges.
//! - [`soh`] estimates state of health from incremental-capacity and
//!   differential-voltage curves: quality gating, curve construction,
//!   peak-feature extraction, and a calibrated lookup-table mapping.
//! - [`thermal`] watches fleets of temperature sensors with shape-based
//!   distance (SBD) clustering and flags cells whose thermal shape diverges
//!   from the group, well before a fixed onboard threshold trips.
//! - [`synth`] simulates cells end to end (half-cell open-circuit curves,
//!   CCCV charging, lumped thermal dynamics, injected faults) and emits
//!   fleet datasets with hidden ground truth for training and validation.
//! - [`cli`] wires everything into the `battkit` binary.
//!
//! Every stochastic step takes an explicit seed and every artifact embeds
//! the resolved configuration, so identical invocations produce identical
//! bytes.
//!
//! # Runnable examples
//!
//! Each major capability has a self-contained example under `examples/`:
//!
//! ```text
//! cargo run --example synth_fleet       # simulate a small fleet with ground truth
//! cargo run --example ingest_pipeline   # ingest -> clean -> segment -> windows
//! cargo run --example soc_pipeline      # train and evaluate the SOC network
//! cargo run --example soh_pipeline      # curves -> features -> LUT -> estimate
//! cargo run --example thermal_watch     # cluster sensors and catch a runaway
//! ```

pub mod cli;
pub mod error;
pub mod soc;
pub mod soh;
pub mod synth;
pub mod telemetry;
pub mod thermal;

pub use error::{Error, Result};
