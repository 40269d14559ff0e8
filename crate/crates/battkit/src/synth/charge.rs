use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ocv::{electrode_window, smeared_ocv_table, CellChemistry, DegradationState};
use crate::error::{Error, Result};
use crate::telemetry::{interp_at, TelemetrySample};

/// Charger current shape during the CC phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChargeProfile {
    /// Constant current, then constant voltage.
    #[default]
    Cccv,
    /// CC with sinusoidal ripple, as seen on AC charging: the commanded
    /// current is `base * (1 + depth * sin(2 pi t / period))`.
    AcRipple { depth: f64, period_s: f64 },
}

/// Additive Gaussian measurement noise (1-sigma).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub current_a: f64,
    pub voltage_v: f64,
    pub temperature_c: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            current_a: 0.01,
            voltage_v: 0.002,
            temperature_c: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ChargeOptions {
    pub start_soc_pct: f64,
    pub profile: ChargeProfile,
    pub seed: u64,
    pub noise: NoiseConfig,
    /// Timestamp of the first sample, epoch seconds.
    pub t0_s: f64,
    /// Abort guard; a charge that cannot finish within this span is a
    /// configuration error.
    pub max_hours: f64,
}

impl Default for ChargeOptions {
    fn default() -> Self {
        Self {
            start_soc_pct: 0.0,
            profile: ChargeProfile::Cccv,
            seed: 0,
            noise: NoiseConfig::default(),
            t0_s: 0.0,
            max_hours: 48.0,
        }
    }
}

/// Hidden ground truth accompanying a simulated charge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChargeTruth {
    /// Low-rate capacity between the voltage limits for this degradation.
    pub true_capacity_ah: f64,
    pub true_soh_pct: f64,
    pub start_soc_pct: f64,
    /// (timestamp, SOC percent) at every emitted sample. Coulomb counting
    /// the emitted current with `true_capacity_ah` reproduces this trace:
    /// the simulator integrates the same trapezoid it emits.
    pub soc_trace: Vec<(f64, f64)>,
    pub delivered_ah: f64,
    /// Index of the first constant-voltage sample, if the CV phase started.
    pub cv_start_index: Option<usize>,
    pub final_temperature_c: f64,
}

#[derive(Debug, Clone)]
pub struct SimulatedCharge {
    pub samples: Vec<TelemetrySample>,
    pub truth: ChargeTruth,
}

/// Simulate one CCCV charge.
///
/// Terminal voltage is open-circuit voltage (rate-smeared) plus ohmic and
/// RC overpotentials; heat is overpotential power into a lumped node with
/// Newton cooling. Current noise models charger regulation error: the noisy
/// current is both emitted and integrated, so the emitted signal and the
/// hidden SOC trace agree exactly.
pub fn simulate_charge(
    chem: &CellChemistry,
    deg: &DegradationState,
    ambient_c: f64,
    c_rate: f64,
    dt_s: f64,
    opts: &ChargeOptions,
) -> Result<SimulatedCharge> {
    if dt_s <= 0.0 || !dt_s.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {dt_s}")));
    }
    if c_rate <= 0.0 {
        return Err(Error::Domain(format!("charge rate must be positive, got {c_rate}")));
    }
    if !(0.0..=100.0).contains(&opts.start_soc_pct) {
        return Err(Error::Domain(format!("start SOC {}%, want [0, 100]", opts.start_soc_pct)));
    }

    let window = electrode_window(chem, deg)?;
    let sigma = chem.smear_sigma_ah(c_rate, ambient_c);
    let pad = 4.0 * sigma + 0.1 * window.capacity_ah;
    let (ls, vs) = smeared_ocv_table(chem, &window, sigma, pad, 4000);
    let ocv = |l: f64| interp_at(&ls, &vs, l);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise_i = Normal::new(0.0, opts.noise.current_a.max(1e-12)).unwrap();
    let noise_v = Normal::new(0.0, opts.noise.voltage_v.max(1e-12)).unwrap();
    let noise_t = Normal::new(0.0, opts.noise.temperature_c.max(1e-12)).unwrap();

    let cc_current = c_rate * chem.nominal_capacity_ah;
    let taper_a = chem.taper_current_c * chem.nominal_capacity_ah;
    let max_steps = (opts.max_hours * 3600.0 / dt_s).ceil() as usize;

    let mut l = window.soc_to_l(opts.start_soc_pct);
    let l_start = l;
    let mut v_rc = vec![0.0f64; chem.rc_pairs.len()];
    let mut temp = ambient_c;
    let mut in_cv = false;
    let mut cv_start_index = None;
    let mut prev_i: Option<f64> = None;

    let mut samples = Vec::new();
    let mut soc_trace = Vec::new();

    for k in 0..=max_steps {
        let t = opts.t0_s + k as f64 * dt_s;
        let r0 = chem.r0_at(temp);

        // Commanded current from the state at the previous sample (one-step
        // controller latency in the CV loop).
        let i_cmd = if in_cv {
            ((chem.v_max - ocv(l) - v_rc.iter().sum::<f64>()) / r0).clamp(0.0, cc_current)
        } else {
            match &opts.profile {
                ChargeProfile::Cccv => cc_current,
                ChargeProfile::AcRipple { depth, period_s } => {
                    let rel = k as f64 * dt_s;
                    cc_current * (1.0 + depth * (2.0 * std::f64::consts::PI * rel / period_s).sin())
                }
            }
        };
        if in_cv && i_cmd <= taper_a {
            break;
        }
        let i_k = i_cmd + noise_i.sample(&mut rng);

        // Lithium bookkeeping is the trapezoid of the *emitted* current, so
        // downstream coulomb counting closes the loop exactly.
        if let Some(ip) = prev_i {
            l += (ip + i_k) * 0.5 * dt_s / 3600.0;
        }
        prev_i = Some(i_k);

        // RC branches relax exactly toward i * R over one step.
        for (j, &(r, c)) in chem.rc_pairs.iter().enumerate() {
            let tau = r * c;
            v_rc[j] = i_k * r + (v_rc[j] - i_k * r) * (-dt_s / tau).exp();
        }
        let v_term = ocv(l) + i_k * r0 + v_rc.iter().sum::<f64>();

        // Overpotential heat into the lumped node, exact exponential step.
        let p_heat = (i_k * (i_k * r0 + v_rc.iter().sum::<f64>())).max(0.0);
        let h = chem.cooling_w_per_k;
        let cth = chem.heat_capacity_j_per_k;
        temp = if h > 0.0 {
            let t_inf = ambient_c + p_heat / h;
            t_inf + (temp - t_inf) * (-h * dt_s / cth).exp()
        } else {
            temp + p_heat * dt_s / cth
        };

        let v_meas = v_term + noise_v.sample(&mut rng);
        let t_meas = temp + noise_t.sample(&mut rng);
        samples.push(TelemetrySample::new(t, i_k, v_meas, vec![v_meas], vec![t_meas]));
        soc_trace.push((t, window.l_to_soc(l)));

        if !in_cv && v_term >= chem.v_max {
            in_cv = true;
            cv_start_index = Some(samples.len());
        }
        if l >= window.l_max + pad * 0.5 {
            break;
        }
        if k == max_steps {
            return Err(Error::Integrator(format!(
                "charge did not finish within {} h; check rate and taper settings",
                opts.max_hours
            )));
        }
    }

    Ok(SimulatedCharge {
        samples,
        truth: ChargeTruth {
            true_capacity_ah: window.capacity_ah,
            true_soh_pct: window.capacity_ah / chem.nominal_capacity_ah * 100.0,
            start_soc_pct: opts.start_soc_pct,
            soc_trace,
            delivered_ah: l - l_start,
            cv_start_index,
            final_temperature_c: temp,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chem() -> CellChemistry {
        CellChemistry::nmc_graphite(5.0).unwrap()
    }

    fn quiet() -> ChargeOptions {
        ChargeOptions {
            noise: NoiseConfig {
                current_a: 0.0,
                voltage_v: 0.0,
                temperature_c: 0.0,
            },
            ..ChargeOptions::default()
        }
    }

    #[test]
    fn slow_charge_delivers_nominal_capacity() {
        let chem = chem();
        let sim = simulate_charge(
            &chem,
            &DegradationState::default(),
            25.0,
            0.1,
            5.0,
            &quiet(),
        )
        .unwrap();
        let err = (sim.truth.delivered_ah - 5.0).abs() / 5.0;
        assert!(err < 0.005, "delivered {} Ah", sim.truth.delivered_ah);
        assert!(sim.truth.cv_start_index.is_some());
    }

    #[test]
    fn coulomb_of_emitted_current_reproduces_soc_trace() {
        let chem = chem();
        let opts = ChargeOptions {
            seed: 7,
            ..ChargeOptions::default()
        };
        let sim = simulate_charge(&chem, &DegradationState::default(), 25.0, 0.5, 1.0, &opts).unwrap();
        let cap = sim.truth.true_capacity_ah;
        let mut soc = sim.truth.start_soc_pct;
        let mut max_err: f64 = 0.0;
        for (k, pair) in sim.samples.windows(2).enumerate() {
            let dq = (pair[0].pack_current + pair[1].pack_current) * 0.5
                * (pair[1].timestamp - pair[0].timestamp)
                / 3600.0;
            soc += dq / cap * 100.0;
            max_err = max_err.max((soc - sim.truth.soc_trace[k + 1].1).abs());
        }
        assert!(max_err < 1e-6, "max divergence {max_err}");
    }

    #[test]
    fn cv_phase_holds_voltage_and_tapers() {
        let chem = chem();
        let sim = simulate_charge(&chem, &DegradationState::default(), 25.0, 0.5, 1.0, &quiet()).unwrap();
        let cv = sim.truth.cv_start_index.unwrap();
        assert!(cv > 0 && cv < sim.samples.len());
        for s in &sim.samples[cv..] {
            assert!(s.pack_voltage <= chem.v_max + 0.005, "v={}", s.pack_voltage);
        }
        let taper = chem.taper_current_c * chem.nominal_capacity_ah;
        let last = sim.samples.last().unwrap();
        assert!(last.pack_current > taper * 0.9);
        assert!(last.pack_current < 0.5 * chem.nominal_capacity_ah * 0.5);
        // Current decreases through the CV phase.
        let mid = &sim.samples[(cv + sim.samples.len()) / 2];
        assert!(mid.pack_current < sim.samples[cv].pack_current);
    }

    #[test]
    fn aged_cell_delivers_less() {
        let chem = chem();
        let aged = DegradationState {
            lli: 0.15,
            lam_anode: 0.03,
            lam_cathode: 0.015,
        };
        let fresh = simulate_charge(&chem, &DegradationState::default(), 25.0, 0.33, 2.0, &quiet())
            .unwrap()
            .truth
            .delivered_ah;
        let worn = simulate_charge(&chem, &aged, 25.0, 0.33, 2.0, &quiet())
            .unwrap()
            .truth
            .delivered_ah;
        assert!(worn < 0.88 * fresh, "fresh {fresh} aged {worn}");
    }

    #[test]
    fn identical_seeds_reproduce_identical_samples() {
        let chem = chem();
        let opts = ChargeOptions {
            seed: 42,
            ..ChargeOptions::default()
        };
        let a = simulate_charge(&chem, &DegradationState::default(), 25.0, 0.5, 1.0, &opts).unwrap();
        let b = simulate_charge(&chem, &DegradationState::default(), 25.0, 0.5, 1.0, &opts).unwrap();
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.pack_current.to_bits(), y.pack_current.to_bits());
            assert_eq!(x.pack_voltage.to_bits(), y.pack_voltage.to_bits());
        }
    }

    #[test]
    fn ac_ripple_modulates_cc_current() {
        let chem = chem();
        let opts = ChargeOptions {
            profile: ChargeProfile::AcRipple {
                depth: 0.3,
                period_s: 120.0,
            },
            noise: NoiseConfig {
                current_a: 0.0,
                voltage_v: 0.0,
                temperature_c: 0.0,
            },
            ..ChargeOptions::default()
        };
        let sim = simulate_charge(&chem, &DegradationState::default(), 25.0, 0.15, 1.0, &opts).unwrap();
        let cv = sim.truth.cv_start_index.unwrap_or(sim.samples.len());
        let cc = &sim.samples[..cv.min(600)];
        let base = 0.15 * 5.0;
        let hi = cc.iter().map(|s| s.pack_current).fold(f64::MIN, f64::max);
        let lo = cc.iter().map(|s| s.pack_current).fold(f64::MAX, f64::min);
        assert!(hi > base * 1.25 && lo < base * 0.75, "hi {hi} lo {lo}");
    }

    #[test]
    fn bad_arguments_are_domain_errors() {
        let chem = chem();
        let deg = DegradationState::default();
        assert!(simulate_charge(&chem, &deg, 25.0, -0.5, 1.0, &quiet()).is_err());
        assert!(simulate_charge(&chem, &deg, 25.0, 0.5, 0.0, &quiet()).is_err());
        let opts = ChargeOptions {
            start_soc_pct: 150.0,
            ..quiet()
        };
        assert!(simulate_charge(&chem, &deg, 25.0, 0.5, 1.0, &opts).is_err());
    }
}
