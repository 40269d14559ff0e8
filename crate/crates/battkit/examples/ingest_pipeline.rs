//! Ingest a raw telemetry log, clean it, and slice it into charge
//! segments and per-sensor windows.
//!
//! The log is synthesized here so the example is self-contained, then a
//! few rows are corrupted on disk the way real exports are: a mangled
//! line, an impossible temperature, a dead voltage reading. The pipeline
//! reports exactly what it rejected and why instead of silently patching.

use std::fs::OpenOptions;
use std::io::Write;

use battkit::synth::{simulate_charge, CellChemistry, ChargeOptions, DegradationState};
use battkit::telemetry::{
    clean, ingest_file, segment_charges, window_signals, write_csv, GateConfig, LimitsConfig,
    SchemaConfig, SensorSelector, WindowingConfig,
};

fn main() -> battkit::Result<()> {
    let chem = CellChemistry::nmc_graphite(5.0)?;
    let sim = simulate_charge(
        &chem,
        &DegradationState::default(),
        25.0,
        0.5,
        10.0,
        &ChargeOptions { start_soc_pct: 12.0, seed: 9, ..Default::default() },
    )?;

    let path = std::env::temp_dir().join("battkit_ingest_demo.csv");
    let schema = SchemaConfig::default();
    write_csv(&sim.samples, &path, &schema)?;

    // Damage the export: one unparseable line, one -300 C temperature,
    // one impossible cell voltage, and a duplicate of an existing
    // timestamp, all appended out of order.
    let mut file = OpenOptions::new().append(true).open(&path)?;
    writeln!(file, "not,a,valid,row")?;
    writeln!(file, "3001,2.5,3.9,3.9,-300.0")?;
    writeln!(file, "3002,2.5,3.9,9.9,25.0")?;
    writeln!(file, "3000,2.5,3.9,3.9,25.0")?;
    drop(file);

    let (raw, ingest) = ingest_file(&path, &schema)?;
    println!(
        "ingested {} of {} rows ({} rejected: {:?})",
        ingest.rows_ingested,
        ingest.rows_total,
        ingest.rows_total - ingest.rows_ingested,
        ingest.rejects
    );

    let (cleaned, report) = clean(&raw, &LimitsConfig::default());
    println!(
        "clean kept {} of {} rows ({} duplicate, {} resorted); field values flagged: {:?}",
        report.rows_out,
        report.rows_in,
        report.duplicates_dropped,
        report.reordered,
        report.fields_flagged
    );

    let segments = segment_charges(&cleaned, &GateConfig::default());
    for (i, seg) in segments.iter().enumerate() {
        println!(
            "segment {i}: {} samples, {:.2} Ah at {:.2}C mean rate, {:.1} C mean temperature",
            seg.samples.len(),
            seg.charge_throughput_ah,
            seg.mean_c_rate,
            seg.mean_temperature_c
        );
    }

    // Per-sensor windows are what the thermal monitor consumes.
    let windows = window_signals(
        &cleaned,
        &SensorSelector::AllTemperatures,
        &WindowingConfig { window_len: 60, stride: 30, dt_s: 10.0, ..Default::default() },
    );
    let informative = windows.iter().filter(|w| !w.is_static).count();
    println!(
        "{} windows of 60 points ({} carry shape, {} static)",
        windows.len(),
        informative,
        windows.len() - informative
    );
    Ok(())
}
