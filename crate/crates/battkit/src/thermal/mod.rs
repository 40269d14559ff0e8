//! Shape-based thermal anomaly monitoring.
//!
//! The pipeline: [`stream_batches`] slices a telemetry stream into
//! per-sensor windows, [`ShapeClusterState::detect`] clusters each batch
//! by shape ([`kshape_cluster`] over the distance in [`sbd`]) and flags
//! sensors whose membership or fitting error breaks from the pack, and
//! [`ShapeClusterState::isolate`] ranks the likely faulted channels.

mod kshape;
mod monitor;
mod shape;

pub use kshape::{kshape_cluster, ClusterConfig, Clustering};
pub use monitor::{
    stream_batches, AnomalyCriterion, AnomalyVerdict, MonitorConfig, SensorVerdict,
    ShapeClusterState, SignalWindow, WindowBatch, MONITOR_FORMAT_VERSION,
};
pub use shape::{align_to, best_correlation, sbd, znormalize};
