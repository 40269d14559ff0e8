//! Train the state-of-charge network on a synthetic fleet and check it
//! against a charge it never saw.
//!
//! Labels come from coulomb counting the emitted current with the true
//! capacity, which the simulator guarantees reproduces its hidden SOC
//! trace exactly. The trained network then runs on a fresh log at an
//! ambient temperature between the training points.

use battkit::soc::{coulomb_count, dataset_from_fleet, train, FeatureConfig, TrainConfig};
use battkit::synth::{emit_fleet, simulate_charge, CellChemistry, ChargeOptions, DegradationState, ScenarioConfig};

const SCENARIO: &str = r#"
name = "soc-demo"
seed = 42

[[charge]]
id = "cold"
ambient_c = 10.0
c_rate = 0.5
dt_s = 30.0
start_soc_pct = 10.0
repeats = 2

[[charge]]
id = "room"
ambient_c = 25.0
c_rate = 0.5
dt_s = 30.0
start_soc_pct = 5.0
repeats = 2

[[charge]]
id = "warm"
ambient_c = 40.0
c_rate = 0.5
dt_s = 30.0
start_soc_pct = 15.0
repeats = 2
"#;

fn main() -> battkit::Result<()> {
    let scenario = ScenarioConfig::from_toml(SCENARIO)?;
    let dir = std::env::temp_dir().join("battkit_soc_demo");
    let manifest = emit_fleet(&scenario, &dir)?;

    // Each row is the current sample plus a short history of
    // voltage/current/temperature at 30 s spacing.
    let features = FeatureConfig { history: 4, stride_s: 30.0 };
    let dataset = dataset_from_fleet(&manifest, &dir, &features, 15.0)?;
    println!("dataset: {} rows of {} features", dataset.features.len(), features.input_dim());

    let (net, report) = train(&dataset, features, &TrainConfig::default())?;

    println!(
        "trained in {} iterations ({} accepted); RMSE train {:.2} validation {:.2} test {:.2}",
        report.iterations,
        report.accepted_steps,
        report.train.rmse,
        report.validation.rmse,
        report.test.rmse
    );

    // Fresh charge at 32 C, an ambient the fleet never produced.
    let chem = CellChemistry::nmc_graphite(manifest.nominal_capacity_ah)?;
    let sim = simulate_charge(
        &chem,
        &DegradationState::default(),
        32.0,
        0.5,
        30.0,
        &ChargeOptions { start_soc_pct: 8.0, seed: 1234, ..Default::default() },
    )?;
    let truth = coulomb_count(&sim.samples, sim.truth.true_capacity_ah, sim.truth.start_soc_pct)?;

    let estimates = net.predict_series(&sim.samples)?;
    let offset = sim.samples.len() - estimates.len();
    let mut worst = 0.0_f64;
    for (e, t) in estimates.iter().zip(&truth[offset..]) {
        worst = worst.max((e.soc_pct - t).abs());
    }
    println!("held-out charge at 32 C: worst error {worst:.2} points over {} estimates", estimates.len());
    for at in [0, estimates.len() / 2, estimates.len() - 1] {
        let e = &estimates[at];
        println!(
            "  t={:>6.0}s estimate {:>5.1}% truth {:>5.1}%{}",
            e.timestamp,
            e.soc_pct,
            truth[offset + at],
            if e.overridden { " (full-charge hold)" } else { "" }
        );
    }
    Ok(())
}
