//! Emit a small synthetic fleet with hidden ground truth.
//!
//! A scenario file declares charges (by target health) and thermal packs
//! (by injected fault); `emit_fleet` simulates them all and writes plain
//! telemetry CSVs next to a manifest holding the truth the files hide.
//! Training and validation flows read the files like real logs and check
//! themselves against the manifest.

use battkit::synth::{emit_fleet, ManifestEntry, ScenarioConfig};

const SCENARIO: &str = r#"
name = "demo-fleet"
seed = 42

[[charge]]
id = "fresh"
ambient_c = 25.0
c_rate = 0.5
dt_s = 30.0
target_soh_pct = 100.0

[[charge]]
id = "midlife"
ambient_c = 25.0
c_rate = 0.5
dt_s = 30.0
target_soh_pct = 90.0

[[charge]]
id = "aged-cold"
ambient_c = 10.0
c_rate = 0.5
dt_s = 30.0
target_soh_pct = 82.0

[[thermal]]
id = "pack-runaway"
sensors = 16
dt_s = 60.0
horizon_s = 172800.0

[thermal.fault]
kind = "hotspot_runaway"
sensor = 4
onset_s = 86400.0
magnitude = 1.0
"#;

fn main() -> battkit::Result<()> {
    let scenario = ScenarioConfig::from_toml(SCENARIO)?;
    let out = std::env::temp_dir().join("battkit_synth_fleet");
    let manifest = emit_fleet(&scenario, &out)?;

    println!("fleet '{}' written under {}", manifest.name, out.display());
    for entry in &manifest.entries {
        match entry {
            ManifestEntry::Charge {
                id,
                path,
                true_soh_pct,
                true_capacity_ah,
                ambient_c,
                ..
            } => {
                println!(
                    "  charge  {id:<12} {path:<24} truth: {true_soh_pct:.1}% SOH \
                     ({true_capacity_ah:.3} Ah) at {ambient_c:.0} C"
                );
            }
            ManifestEntry::Thermal {
                id,
                path,
                sensors,
                onset_s,
                threshold_crossing_s,
                onboard_threshold_c,
                ..
            } => {
                println!("  thermal {id:<12} {path:<24} {sensors} sensors");
                if let Some(t) = onset_s {
                    println!("          fault onset at epoch {t:.0} s");
                }
                match (onset_s, threshold_crossing_s) {
                    (Some(t0), Some(t)) => println!(
                        "          onboard {onboard_threshold_c:.0} C alarm fires {:.1} h after onset",
                        (t - t0) / 3600.0
                    ),
                    (_, Some(t)) => println!(
                        "          onboard {onboard_threshold_c:.0} C alarm fires at epoch {t:.0} s"
                    ),
                    _ => println!("          onboard threshold never trips in this horizon"),
                }
            }
        }
    }

    // The manifest is the contract: rerunning with the same scenario and
    // seed reproduces every file byte for byte.
    println!("manifest: {}", out.join("ground_truth.json").display());
    Ok(())
}
