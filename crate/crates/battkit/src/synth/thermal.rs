use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::TelemetrySample;

/// Waste-heat input driving the module's thermal node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PowerProfile {
    Zero,
    Constant {
        watts: f64,
    },
    /// Daily cycle with a faster load swing on top; negative sums clamp
    /// to zero (duty heat cannot cool).
    Daily {
        mean_w: f64,
        daily_amplitude_w: f64,
        swing_amplitude_w: f64,
        swing_period_s: f64,
        #[serde(default)]
        phase_rad: f64,
    },
    /// Joule heating `I^2 R` with the configured resistance.
    Current {
        amps: f64,
    },
}

impl PowerProfile {
    pub fn power_w(&self, t_s: f64, joule_resistance_ohm: f64) -> f64 {
        match self {
            PowerProfile::Zero => 0.0,
            PowerProfile::Constant { watts } => *watts,
            PowerProfile::Daily {
                mean_w,
                daily_amplitude_w,
                swing_amplitude_w,
                swing_period_s,
                phase_rad,
            } => {
                let two_pi = 2.0 * std::f64::consts::PI;
                let p = mean_w
                    + daily_amplitude_w * (two_pi * t_s / 86_400.0 + phase_rad).sin()
                    + swing_amplitude_w * (two_pi * t_s / swing_period_s + 1.7 * phase_rad).sin();
                p.max(0.0)
            }
            PowerProfile::Current { amps } => amps * amps * joule_resistance_ohm,
        }
    }
}

/// Self-heating law for the runaway seed: power doubles roughly every
/// `t^2 / activation_temperature` kelvin and saturates at `power_cap_w`
/// (reactant depletion / vent limit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrheniusParams {
    pub activation_temperature_k: f64,
    /// Self-heating power at the reference temperature.
    pub power_at_reference_w: f64,
    pub reference_c: f64,
    pub power_cap_w: f64,
}

impl Default for ArrheniusParams {
    fn default() -> Self {
        Self {
            activation_temperature_k: 12_000.0,
            power_at_reference_w: 4.0,
            reference_c: 30.0,
            power_cap_w: 60.0,
        }
    }
}

impl ArrheniusParams {
    pub fn power_w(&self, temp_c: f64, magnitude: f64) -> f64 {
        let t_k = temp_c + 273.15;
        let t_ref = self.reference_c + 273.15;
        let q = magnitude
            * self.power_at_reference_w
            * (self.activation_temperature_k * (1.0 / t_ref - 1.0 / t_k)).exp();
        q.min(self.power_cap_w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThermalSimConfig {
    /// Module node.
    pub heat_capacity_j_per_k: f64,
    pub cooling_w_per_k: f64,
    pub coolant_temperature_c: f64,
    /// Defaults to the coolant temperature.
    pub initial_temperature_c: Option<f64>,
    /// Used by `PowerProfile::Current`.
    pub joule_resistance_ohm: f64,
    /// Local hotspot node spawned by the runaway fault; it cools toward the
    /// module temperature, not the coolant.
    pub hotspot_heat_capacity_j_per_k: f64,
    pub hotspot_cooling_w_per_k: f64,
    pub arrhenius: ArrheniusParams,
    /// Fixed per-sensor mounting offsets are drawn from this spread.
    pub sensor_offset_spread_c: f64,
    pub sensor_noise_c: f64,
    /// A per-step true-temperature change beyond this aborts the run: the
    /// step size is too coarse for the dynamics.
    pub max_step_delta_k: f64,
}

impl Default for ThermalSimConfig {
    fn default() -> Self {
        Self {
            heat_capacity_j_per_k: 20_000.0,
            cooling_w_per_k: 15.0,
            coolant_temperature_c: 22.0,
            initial_temperature_c: None,
            joule_resistance_ohm: 0.05,
            hotspot_heat_capacity_j_per_k: 3_000.0,
            hotspot_cooling_w_per_k: 1.0,
            arrhenius: ArrheniusParams::default(),
            sensor_offset_spread_c: 0.4,
            sensor_noise_c: 0.1,
            max_step_delta_k: 20.0,
        }
    }
}

/// Injected sensor or cell fault.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultSpec {
    #[default]
    None,
    /// Reading freezes at its onset value.
    StuckSensor { sensor: usize, onset_s: f64 },
    /// Reading gains a linear bias after onset.
    DriftSensor {
        sensor: usize,
        onset_s: f64,
        slope_c_per_hour: f64,
    },
    /// A local hotspot with Arrhenius self-heating grows under one sensor;
    /// `magnitude` scales the self-heating power.
    HotspotRunaway {
        sensor: usize,
        onset_s: f64,
        magnitude: f64,
    },
}

impl FaultSpec {
    pub fn sensor(&self) -> Option<usize> {
        match self {
            FaultSpec::None => None,
            FaultSpec::StuckSensor { sensor, .. }
            | FaultSpec::DriftSensor { sensor, .. }
            | FaultSpec::HotspotRunaway { sensor, .. } => Some(*sensor),
        }
    }

    pub fn onset_s(&self) -> Option<f64> {
        match self {
            FaultSpec::None => None,
            FaultSpec::StuckSensor { onset_s, .. }
            | FaultSpec::DriftSensor { onset_s, .. }
            | FaultSpec::HotspotRunaway { onset_s, .. } => Some(*onset_s),
        }
    }
}

/// True (noise-free) node trajectories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermalTruth {
    pub times_s: Vec<f64>,
    pub module_c: Vec<f64>,
    /// Hotspot node; equals the module trace before onset and when no
    /// runaway fault is configured.
    pub hotspot_c: Vec<f64>,
    pub onset_s: Option<f64>,
    pub sensor_offsets_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ThermalSim {
    pub samples: Vec<TelemetrySample>,
    pub truth: ThermalTruth,
}

/// One exact integration step of `C dT/dt = p - h (T - T_env)` with `p`
/// held constant over the step. Exact in the linear part, so coarse steps
/// stay stable and closed-form tests hold to rounding error.
fn exact_step(temp: f64, t_env: f64, p_w: f64, h: f64, c: f64, dt: f64) -> f64 {
    if h <= 0.0 {
        temp + p_w * dt / c
    } else {
        let t_inf = t_env + p_w / h;
        t_inf + (temp - t_inf) * (-h * dt / c).exp()
    }
}

/// Simulate a multi-sensor thermal trace with optional fault injection.
///
/// All sensors read the module node plus a fixed mounting offset and
/// Gaussian noise; a faulted sensor reads its fault-transformed value
/// instead. Timestamps start at zero.
pub fn simulate_thermal(
    config: &ThermalSimConfig,
    duty: &PowerProfile,
    fault: &FaultSpec,
    horizon_s: f64,
    dt_s: f64,
    n_sensors: usize,
    seed: u64,
) -> Result<ThermalSim> {
    if dt_s <= 0.0 || !dt_s.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {dt_s}")));
    }
    if horizon_s < dt_s {
        return Err(Error::Config("horizon shorter than one step".into()));
    }
    if n_sensors == 0 {
        return Err(Error::Config("need at least one sensor".into()));
    }
    if let Some(s) = fault.sensor() {
        if s >= n_sensors {
            return Err(Error::Config(format!("fault sensor {s} out of range 0..{n_sensors}")));
        }
    }

    let steps = (horizon_s / dt_s).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset_dist = Normal::new(0.0, config.sensor_offset_spread_c.max(1e-12)).unwrap();
    let noise = Normal::new(0.0, config.sensor_noise_c.max(1e-12)).unwrap();
    let offsets: Vec<f64> = (0..n_sensors).map(|_| offset_dist.sample(&mut rng)).collect();

    let t_init = config.initial_temperature_c.unwrap_or(config.coolant_temperature_c);
    let mut module = t_init;
    let mut hotspot = t_init;
    let mut hotspot_live = false;

    let mut truth = ThermalTruth {
        times_s: Vec::with_capacity(steps + 1),
        module_c: Vec::with_capacity(steps + 1),
        hotspot_c: Vec::with_capacity(steps + 1),
        onset_s: fault.onset_s(),
        sensor_offsets_c: offsets.clone(),
    };
    let mut samples = Vec::with_capacity(steps + 1);
    let mut stuck_value: Option<f64> = None;

    for k in 0..=steps {
        let t = k as f64 * dt_s;

        if k > 0 {
            let p = duty.power_w((k - 1) as f64 * dt_s, config.joule_resistance_ohm);
            let next = exact_step(
                module,
                config.coolant_temperature_c,
                p,
                config.cooling_w_per_k,
                config.heat_capacity_j_per_k,
                dt_s,
            );
            check_step(module, next, config.max_step_delta_k, dt_s)?;
            module = next;

            if let FaultSpec::HotspotRunaway { onset_s, magnitude, .. } = fault {
                if t >= *onset_s {
                    if !hotspot_live {
                        hotspot = module;
                        hotspot_live = true;
                    }
                    let q = config.arrhenius.power_w(hotspot, *magnitude);
                    let next = exact_step(
                        hotspot,
                        module,
                        q,
                        config.hotspot_cooling_w_per_k,
                        config.hotspot_heat_capacity_j_per_k,
                        dt_s,
                    );
                    check_step(hotspot, next, config.max_step_delta_k, dt_s)?;
                    hotspot = next;
                }
            }
        }
        if !hotspot_live {
            hotspot = module;
        }

        truth.times_s.push(t);
        truth.module_c.push(module);
        truth.hotspot_c.push(hotspot);

        let mut temps = Vec::with_capacity(n_sensors);
        for (i, &off) in offsets.iter().enumerate() {
            let n = noise.sample(&mut rng);
            let mut reading = module + off + n;
            match fault {
                FaultSpec::StuckSensor { sensor, onset_s } if i == *sensor => {
                    if t >= *onset_s {
                        reading = *stuck_value.get_or_insert(reading);
                    }
                }
                FaultSpec::DriftSensor {
                    sensor,
                    onset_s,
                    slope_c_per_hour,
                } if i == *sensor => {
                    if t >= *onset_s {
                        reading += slope_c_per_hour * (t - onset_s) / 3600.0;
                    }
                }
                FaultSpec::HotspotRunaway { sensor, .. } if i == *sensor
                    && hotspot_live => {
                        reading = hotspot + off + n;
                    }
                _ => {}
            }
            temps.push(reading);
        }

        let p_now = duty.power_w(t, config.joule_resistance_ohm);
        samples.push(TelemetrySample::new(t, p_now / 400.0, 400.0, vec![], temps));
    }

    Ok(ThermalSim { samples, truth })
}

fn check_step(before: f64, after: f64, max_delta: f64, dt_s: f64) -> Result<()> {
    if !after.is_finite() || (after - before).abs() > max_delta {
        return Err(Error::Integrator(format!(
            "temperature moved {:.1} K in one {dt_s} s step; reduce dt",
            after - before
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(coolant: f64) -> ThermalSimConfig {
        ThermalSimConfig {
            coolant_temperature_c: coolant,
            sensor_noise_c: 0.0,
            sensor_offset_spread_c: 0.0,
            ..ThermalSimConfig::default()
        }
    }

    #[test]
    fn zero_power_decay_matches_closed_form() {
        let mut config = quiet(25.0);
        config.initial_temperature_c = Some(45.0);
        let sim = simulate_thermal(&config, &PowerProfile::Zero, &FaultSpec::None, 7200.0, 10.0, 1, 0)
            .unwrap();
        let tau = config.heat_capacity_j_per_k / config.cooling_w_per_k;
        for (t, temp) in sim.truth.times_s.iter().zip(&sim.truth.module_c) {
            let expected = 25.0 + 20.0 * (-t / tau).exp();
            assert!(
                (temp - expected).abs() / 20.0 < 1e-3,
                "t={t} temp={temp} expected={expected}"
            );
        }
    }

    #[test]
    fn constant_power_approaches_steady_state() {
        let config = quiet(25.0);
        let p = 45.0;
        let sim = simulate_thermal(
            &config,
            &PowerProfile::Constant { watts: p },
            &FaultSpec::None,
            40_000.0,
            20.0,
            1,
            0,
        )
        .unwrap();
        let tau = config.heat_capacity_j_per_k / config.cooling_w_per_k;
        let t_inf = 25.0 + p / config.cooling_w_per_k;
        for (t, temp) in sim.truth.times_s.iter().zip(&sim.truth.module_c) {
            let expected = t_inf + (25.0 - t_inf) * (-t / tau).exp();
            assert!((temp - expected).abs() < 1e-3 * (t_inf - 25.0));
        }
        let last = *sim.truth.module_c.last().unwrap();
        assert!((last - t_inf).abs() / (t_inf - 25.0) < 1e-3);
    }

    #[test]
    fn energy_balance_closes() {
        let config = quiet(22.0);
        let duty = PowerProfile::Daily {
            mean_w: 120.0,
            daily_amplitude_w: 80.0,
            swing_amplitude_w: 45.0,
            swing_period_s: 10_800.0,
            phase_rad: 0.3,
        };
        let dt = 1.0;
        let sim =
            simulate_thermal(&config, &duty, &FaultSpec::None, 20_000.0, dt, 1, 0).unwrap();
        let trace = &sim.truth.module_c;
        let mut generated = 0.0;
        let mut cooled = 0.0;
        for k in 0..trace.len() - 1 {
            generated += duty.power_w(k as f64 * dt, config.joule_resistance_ohm) * dt;
            let q0 = config.cooling_w_per_k * (trace[k] - 22.0);
            let q1 = config.cooling_w_per_k * (trace[k + 1] - 22.0);
            cooled += 0.5 * (q0 + q1) * dt;
        }
        let stored = config.heat_capacity_j_per_k * (trace[trace.len() - 1] - trace[0]);
        let residual = (generated - cooled - stored).abs();
        assert!(
            residual / generated < 1e-3,
            "residual {residual} J of {generated} J generated"
        );
    }

    #[test]
    fn runaway_accelerates_and_crosses_threshold() {
        let config = quiet(22.0);
        let duty = PowerProfile::Constant { watts: 120.0 };
        let fault = FaultSpec::HotspotRunaway {
            sensor: 0,
            onset_s: 3600.0,
            magnitude: 1.0,
        };
        let sim = simulate_thermal(&config, &duty, &fault, 43_200.0, 60.0, 4, 1).unwrap();
        let hot = &sim.truth.hotspot_c;
        let times = &sim.truth.times_s;
        let crossing = times
            .iter()
            .zip(hot)
            .find(|(_, &h)| h >= 55.0)
            .map(|(t, _)| *t);
        let crossing = crossing.expect("runaway must cross 55 C within the horizon");
        assert!(crossing > 3600.0);

        // Rise rate grows through the mid phase: accelerating, not linear.
        let idx = |t: f64| (t / 60.0) as usize;
        let rate = |a: f64, b: f64| (hot[idx(b)] - hot[idx(a)]) / (b - a);
        let early = rate(4200.0, 6000.0);
        let late = rate(crossing - 2400.0, crossing - 600.0);
        assert!(late > 1.5 * early, "early {early} late {late}");

        // Faulted sensor reads the hotspot, others the module.
        let k = idx(crossing);
        let s = &sim.samples[k];
        assert!((s.temperatures[0] - hot[k]).abs() < 1.0);
        assert!((s.temperatures[1] - sim.truth.module_c[k]).abs() < 1.0);
    }

    #[test]
    fn stuck_and_drift_faults_shape_readings() {
        let config = quiet(22.0);
        let duty = PowerProfile::Daily {
            mean_w: 120.0,
            daily_amplitude_w: 80.0,
            swing_amplitude_w: 45.0,
            swing_period_s: 10_800.0,
            phase_rad: 0.0,
        };
        let stuck = simulate_thermal(
            &config,
            &duty,
            &FaultSpec::StuckSensor { sensor: 1, onset_s: 7200.0 },
            36_000.0,
            60.0,
            3,
            5,
        )
        .unwrap();
        let after: Vec<f64> = stuck
            .samples
            .iter()
            .filter(|s| s.timestamp >= 7200.0)
            .map(|s| s.temperatures[1])
            .collect();
        assert!(after.windows(2).all(|w| w[0] == w[1]));

        let drift = simulate_thermal(
            &config,
            &duty,
            &FaultSpec::DriftSensor {
                sensor: 2,
                onset_s: 0.0,
                slope_c_per_hour: 2.0,
            },
            36_000.0,
            60.0,
            3,
            5,
        )
        .unwrap();
        let last = drift.samples.last().unwrap();
        let bias = last.temperatures[2] - drift.truth.module_c.last().unwrap();
        assert!((bias - 20.0).abs() < 0.5, "10 h at 2 C/h should bias by 20 C, got {bias}");
    }

    #[test]
    fn coarse_step_on_stiff_dynamics_errors() {
        let mut config = quiet(22.0);
        config.heat_capacity_j_per_k = 50.0;
        let result = simulate_thermal(
            &config,
            &PowerProfile::Constant { watts: 4000.0 },
            &FaultSpec::None,
            3600.0,
            600.0,
            1,
            0,
        );
        assert!(matches!(result, Err(Error::Integrator(_))));
    }

    #[test]
    fn fault_sensor_out_of_range_is_config_error() {
        let config = quiet(22.0);
        let result = simulate_thermal(
            &config,
            &PowerProfile::Zero,
            &FaultSpec::StuckSensor { sensor: 9, onset_s: 0.0 },
            3600.0,
            60.0,
            4,
            0,
        );
        assert!(matches!(result, Err(Error::Config(_))));
    }
}
