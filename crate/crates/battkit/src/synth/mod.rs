//! Synthetic cell and fleet simulator.
//!
//! Physics-grounded data source and test oracle: half-cell open-circuit
//! potentials assembled into a full cell with a lithium-inventory bookkeeping
//! of degradation, a CCCV charger with measurement noise, a lumped thermal
//! node with injectable faults, and a scenario runner that emits telemetry
//! files with a hidden ground-truth manifest.
//!
//! Everything is deterministic given the configured seed: reruns produce
//! byte-identical files.

mod charge;
mod fleet;
mod ocv;
mod thermal;

pub use charge::{simulate_charge, ChargeOptions, ChargeProfile, ChargeTruth, NoiseConfig, SimulatedCharge};
pub use fleet::{
    emit_fleet, ChargeEntry, FleetManifest, ManifestEntry, ScenarioConfig, ThermalEntry,
};
pub use ocv::{
    degradation_for_soh, electrode_window, ocv_at, true_capacity, CellChemistry, DegradationState,
    ElectrodeWindow, OcpCurve,
};
pub use thermal::{
    simulate_thermal, ArrheniusParams, FaultSpec, PowerProfile, ThermalSim, ThermalSimConfig,
    ThermalTruth,
};
