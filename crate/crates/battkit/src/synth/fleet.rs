use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::charge::{simulate_charge, ChargeOptions, ChargeProfile, NoiseConfig};
use super::ocv::{degradation_for_soh, CellChemistry, DegradationState};
use super::thermal::{simulate_thermal, FaultSpec, PowerProfile, ThermalSimConfig};
use crate::error::{Error, Result};
use crate::telemetry::{write_csv, SchemaConfig, TelemetrySample};

fn default_dt_charge() -> f64 {
    1.0
}
fn default_repeats() -> usize {
    1
}
fn default_rest() -> f64 {
    900.0
}
fn default_lam_anode_ratio() -> f64 {
    0.2
}
fn default_lam_cathode_ratio() -> f64 {
    0.1
}
fn default_sensors() -> usize {
    16
}
fn default_dt_thermal() -> f64 {
    60.0
}
fn default_duty() -> PowerProfile {
    PowerProfile::Daily {
        mean_w: 120.0,
        daily_amplitude_w: 80.0,
        swing_amplitude_w: 45.0,
        swing_period_s: 10_800.0,
        phase_rad: 0.0,
    }
}
fn default_onboard_threshold() -> f64 {
    55.0
}
fn default_epoch() -> f64 {
    1.7e9
}
fn default_nominal() -> f64 {
    5.0
}

/// One charge recording to synthesize.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChargeEntry {
    pub id: String,
    pub ambient_c: f64,
    pub c_rate: f64,
    #[serde(default = "default_dt_charge")]
    pub dt_s: f64,
    #[serde(default)]
    pub start_soc_pct: f64,
    #[serde(default)]
    pub profile: ChargeProfile,
    /// Explicit degradation; ignored when `target_soh_pct` is set.
    #[serde(default)]
    pub degradation: DegradationState,
    /// Solve degradation to hit this true health instead.
    #[serde(default)]
    pub target_soh_pct: Option<f64>,
    #[serde(default = "default_lam_anode_ratio")]
    pub lam_anode_ratio: f64,
    #[serde(default = "default_lam_cathode_ratio")]
    pub lam_cathode_ratio: f64,
    /// Copies with distinct noise seeds.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Idle padding before and after the charge.
    #[serde(default = "default_rest")]
    pub rest_s: f64,
}

/// One thermal recording to synthesize.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermalEntry {
    pub id: String,
    #[serde(default = "default_sensors")]
    pub sensors: usize,
    #[serde(default = "default_dt_thermal")]
    pub dt_s: f64,
    pub horizon_s: f64,
    #[serde(default = "default_duty")]
    pub duty: PowerProfile,
    #[serde(default)]
    pub fault: FaultSpec,
    #[serde(default)]
    pub config: ThermalSimConfig,
    /// Fixed alarm threshold a plain onboard comparator would use; recorded
    /// so detection lead time can be scored.
    #[serde(default = "default_onboard_threshold")]
    pub onboard_threshold_c: f64,
}

/// Declarative fleet scenario, usually loaded from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_nominal")]
    pub nominal_capacity_ah: f64,
    /// Base timestamp for emitted files, epoch seconds.
    #[serde(default = "default_epoch")]
    pub epoch_s: f64,
    #[serde(default)]
    pub charge: Vec<ChargeEntry>,
    #[serde(default)]
    pub thermal: Vec<ThermalEntry>,
}

impl ScenarioConfig {
    pub fn empty(name: &str, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            seed,
            nominal_capacity_ah: default_nominal(),
            epoch_s: default_epoch(),
            charge: Vec::new(),
            thermal: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("scenario: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("scenario: {e}")))
    }
}

/// Ground-truth record for one emitted file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifestEntry {
    Charge {
        id: String,
        /// Path relative to the manifest's directory.
        path: String,
        seed: u64,
        ambient_c: f64,
        c_rate: f64,
        dt_s: f64,
        profile: ChargeProfile,
        degradation: DegradationState,
        true_capacity_ah: f64,
        true_soh_pct: f64,
        start_soc_pct: f64,
        /// Timestamp of the first charging sample.
        charge_start_s: f64,
        nominal_capacity_ah: f64,
    },
    Thermal {
        id: String,
        path: String,
        seed: u64,
        sensors: usize,
        dt_s: f64,
        horizon_s: f64,
        fault: FaultSpec,
        onset_s: Option<f64>,
        /// First emitted faulted-sensor reading at or above the onboard
        /// threshold, if any.
        threshold_crossing_s: Option<f64>,
        onboard_threshold_c: f64,
    },
}

impl ManifestEntry {
    pub fn path(&self) -> &str {
        match self {
            ManifestEntry::Charge { path, .. } | ManifestEntry::Thermal { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FleetManifest {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub nominal_capacity_ah: f64,
    pub entries: Vec<ManifestEntry>,
}

impl FleetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Stable per-entry seed derivation (splitmix64 over the scenario seed and
/// an entry salt), so adding entries never reshuffles existing files.
pub(crate) fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Render a scenario to disk: `charges/` and `thermal/` CSV files plus a
/// `ground_truth.json` manifest registering every file with its hidden
/// truth. Reruns with the same scenario produce byte-identical output. An
/// empty scenario produces an empty manifest and no data files.
pub fn emit_fleet(scenario: &ScenarioConfig, out_dir: &Path) -> Result<FleetManifest> {
    let schema = SchemaConfig::default();
    let mut manifest = FleetManifest {
        version: 1,
        name: scenario.name.clone(),
        seed: scenario.seed,
        nominal_capacity_ah: scenario.nominal_capacity_ah,
        entries: Vec::new(),
    };
    fs::create_dir_all(out_dir)?;

    let chem = if scenario.charge.is_empty() {
        None
    } else {
        Some(CellChemistry::nmc_graphite(scenario.nominal_capacity_ah)?)
    };

    let mut salt = 0u64;
    for entry in &scenario.charge {
        let chem = chem.as_ref().unwrap();
        let deg = match entry.target_soh_pct {
            Some(target) => {
                degradation_for_soh(chem, target, entry.lam_anode_ratio, entry.lam_cathode_ratio)?
            }
            None => entry.degradation,
        };
        for rep in 0..entry.repeats.max(1) {
            salt += 1;
            let seed = derive_seed(scenario.seed, salt);
            let file_name = if entry.repeats > 1 {
                format!("{}_{rep:02}.csv", entry.id)
            } else {
                format!("{}.csv", entry.id)
            };
            let rel_path = format!("charges/{file_name}");

            let charge_start = scenario.epoch_s + entry.rest_s;
            let opts = ChargeOptions {
                start_soc_pct: entry.start_soc_pct,
                profile: entry.profile.clone(),
                seed: derive_seed(seed, 1),
                noise: NoiseConfig::default(),
                t0_s: charge_start,
                max_hours: 48.0,
            };
            let sim = simulate_charge(chem, &deg, entry.ambient_c, entry.c_rate, entry.dt_s, &opts)?;
            let rows = pad_with_rest(&sim.samples, entry.rest_s, entry.dt_s, derive_seed(seed, 2));

            fs::create_dir_all(out_dir.join("charges"))?;
            write_csv(&rows, &out_dir.join(&rel_path), &schema)?;
            manifest.entries.push(ManifestEntry::Charge {
                id: entry.id.clone(),
                path: rel_path,
                seed,
                ambient_c: entry.ambient_c,
                c_rate: entry.c_rate,
                dt_s: entry.dt_s,
                profile: entry.profile.clone(),
                degradation: deg,
                true_capacity_ah: sim.truth.true_capacity_ah,
                true_soh_pct: sim.truth.true_soh_pct,
                start_soc_pct: entry.start_soc_pct,
                charge_start_s: charge_start,
                nominal_capacity_ah: scenario.nominal_capacity_ah,
            });
        }
    }

    for entry in &scenario.thermal {
        salt += 1;
        let seed = derive_seed(scenario.seed, salt);
        let rel_path = format!("thermal/{}.csv", entry.id);
        let sim = simulate_thermal(
            &entry.config,
            &entry.duty,
            &entry.fault,
            entry.horizon_s,
            entry.dt_s,
            entry.sensors,
            seed,
        )?;
        let mut rows = sim.samples;
        for row in &mut rows {
            row.timestamp += scenario.epoch_s;
        }
        let threshold_crossing_s = entry.fault.sensor().and_then(|sensor| {
            rows.iter()
                .find(|s| s.temperatures[sensor] >= entry.onboard_threshold_c)
                .map(|s| s.timestamp)
        });

        fs::create_dir_all(out_dir.join("thermal"))?;
        write_csv(&rows, &out_dir.join(&rel_path), &schema)?;
        manifest.entries.push(ManifestEntry::Thermal {
            id: entry.id.clone(),
            path: rel_path,
            seed,
            sensors: entry.sensors,
            dt_s: entry.dt_s,
            horizon_s: entry.horizon_s,
            fault: entry.fault,
            onset_s: entry.fault.onset_s().map(|o| o + scenario.epoch_s),
            threshold_crossing_s,
            onboard_threshold_c: entry.onboard_threshold_c,
        });
    }

    manifest.save(&out_dir.join("ground_truth.json"))?;
    Ok(manifest)
}

/// Surround a charge with idle rows: zero commanded current, relaxed
/// voltage, ambient-tracked temperature, plus the usual measurement noise.
fn pad_with_rest(
    charge_rows: &[TelemetrySample],
    rest_s: f64,
    dt_s: f64,
    seed: u64,
) -> Vec<TelemetrySample> {
    if charge_rows.is_empty() || rest_s < dt_s {
        return charge_rows.to_vec();
    }
    let noise = NoiseConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_i = Normal::new(0.0, noise.current_a).unwrap();
    let n_v = Normal::new(0.0, noise.voltage_v).unwrap();
    let n_t = Normal::new(0.0, noise.temperature_c).unwrap();

    let first = &charge_rows[0];
    let last = &charge_rows[charge_rows.len() - 1];
    let steps = (rest_s / dt_s).floor() as usize;

    let mut rows = Vec::with_capacity(charge_rows.len() + 2 * steps);
    for k in (1..=steps).rev() {
        let mut s = first.clone();
        s.timestamp = first.timestamp - k as f64 * dt_s;
        s.pack_current = n_i.sample(&mut rng);
        s.pack_voltage = first.pack_voltage - first.pack_current * 0.0 + n_v.sample(&mut rng);
        s.cell_voltages = vec![s.pack_voltage];
        s.temperatures = vec![first.temperatures[0] + n_t.sample(&mut rng)];
        rows.push(s);
    }
    rows.extend_from_slice(charge_rows);
    for k in 1..=steps {
        let mut s = last.clone();
        s.timestamp = last.timestamp + k as f64 * dt_s;
        s.pack_current = n_i.sample(&mut rng);
        s.pack_voltage = last.pack_voltage + n_v.sample(&mut rng);
        s.cell_voltages = vec![s.pack_voltage];
        s.temperatures = vec![last.temperatures[0] + n_t.sample(&mut rng)];
        rows.push(s);
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scenario_emits_empty_manifest_and_no_data_files() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = ScenarioConfig::empty("nothing", 1);
        let manifest = emit_fleet(&scenario, dir.path()).unwrap();
        assert!(manifest.entries.is_empty());
        assert!(!dir.path().join("charges").exists());
        assert!(!dir.path().join("thermal").exists());
        assert!(dir.path().join("ground_truth.json").exists());
    }

    #[test]
    fn every_file_is_registered_with_truth() {
        let dir = tempfile::tempdir().unwrap();
        let mut scenario = ScenarioConfig::empty("mini", 7);
        scenario.charge.push(ChargeEntry {
            id: "c1".into(),
            ambient_c: 25.0,
            c_rate: 0.5,
            dt_s: 2.0,
            start_soc_pct: 0.0,
            profile: ChargeProfile::Cccv,
            degradation: DegradationState::default(),
            target_soh_pct: Some(90.0),
            lam_anode_ratio: 0.2,
            lam_cathode_ratio: 0.1,
            repeats: 2,
            rest_s: 60.0,
        });
        scenario.thermal.push(ThermalEntry {
            id: "t1".into(),
            sensors: 4,
            dt_s: 60.0,
            horizon_s: 7200.0,
            duty: default_duty(),
            fault: FaultSpec::None,
            config: ThermalSimConfig::default(),
            onboard_threshold_c: 55.0,
        });

        let manifest = emit_fleet(&scenario, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 3);
        for entry in &manifest.entries {
            assert!(dir.path().join(entry.path()).exists(), "{}", entry.path());
        }
        match &manifest.entries[0] {
            ManifestEntry::Charge { true_soh_pct, degradation, .. } => {
                assert!((true_soh_pct - 90.0).abs() < 0.1);
                assert!(degradation.lli > 0.0);
            }
            other => panic!("expected charge entry, got {other:?}"),
        }

        let reloaded = FleetManifest::load(&dir.path().join("ground_truth.json")).unwrap();
        assert_eq!(reloaded.entries.len(), manifest.entries.len());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let mut scenario = ScenarioConfig::empty("repro", 99);
        scenario.charge.push(ChargeEntry {
            id: "c1".into(),
            ambient_c: 10.0,
            c_rate: 0.5,
            dt_s: 2.0,
            start_soc_pct: 40.0,
            profile: ChargeProfile::Cccv,
            degradation: DegradationState::default(),
            target_soh_pct: None,
            lam_anode_ratio: 0.2,
            lam_cathode_ratio: 0.1,
            repeats: 1,
            rest_s: 120.0,
        });
        scenario.thermal.push(ThermalEntry {
            id: "t1".into(),
            sensors: 3,
            dt_s: 60.0,
            horizon_s: 3600.0,
            duty: default_duty(),
            fault: FaultSpec::DriftSensor {
                sensor: 1,
                onset_s: 600.0,
                slope_c_per_hour: 3.0,
            },
            config: ThermalSimConfig::default(),
            onboard_threshold_c: 55.0,
        });

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        emit_fleet(&scenario, dir_a.path()).unwrap();
        emit_fleet(&scenario, dir_b.path()).unwrap();
        for rel in ["charges/c1.csv", "thermal/t1.csv", "ground_truth.json"] {
            let a = fs::read(dir_a.path().join(rel)).unwrap();
            let b = fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between reruns");
        }
    }

    #[test]
    fn scenario_toml_round_trips() {
        let text = r#"
            name = "demo"
            seed = 5

            [[charge]]
            id = "warm"
            ambient_c = 25.0
            c_rate = 0.33
            target_soh_pct = 95.0

            [[thermal]]
            id = "watch"
            horizon_s = 86400.0
            fault = { kind = "hotspot_runaway", sensor = 13, onset_s = 7200.0, magnitude = 1.0 }
        "#;
        let scenario = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(scenario.charge.len(), 1);
        assert_eq!(scenario.thermal[0].sensors, 16);
        assert!(matches!(
            scenario.thermal[0].fault,
            FaultSpec::HotspotRunaway { sensor: 13, .. }
        ));
        let back = ScenarioConfig::from_toml(&scenario.to_toml().unwrap()).unwrap();
        assert_eq!(back.charge[0].id, "warm");
    }
}
