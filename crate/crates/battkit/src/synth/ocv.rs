use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::interp_at;

/// Half-cell open-circuit potential vs a lithium reference, tabulated over
/// stoichiometry in [0, 1]. Potentials are strictly decreasing in
/// stoichiometry for both electrodes (lithiation lowers the potential).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcpCurve {
    pub stoichiometry: Vec<f64>,
    pub potential_v: Vec<f64>,
}

impl OcpCurve {
    pub fn from_fn(f: impl Fn(f64) -> f64, n: usize) -> Self {
        let stoichiometry: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let potential_v = stoichiometry.iter().map(|&x| f(x)).collect();
        Self {
            stoichiometry,
            potential_v,
        }
    }

    /// Interpolated potential; stoichiometry is clamped into [0, 1].
    pub fn eval(&self, x: f64) -> f64 {
        interp_at(&self.stoichiometry, &self.potential_v, x.clamp(0.0, 1.0))
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Graphite-like anode: two staging plateaus with transitions near x = 0.17
/// and x = 0.52, plus the steep dilute-intercalation rise at x -> 0. A small
/// linear tilt keeps the plateaus strictly monotone.
fn graphite_potential(x: f64) -> f64 {
    0.085 - 0.002 * x
        + 0.037 * logistic((0.52 - x) / 0.012)
        + 0.088 * logistic((0.17 - x) / 0.010)
        + 0.55 * (-35.0 * x).exp()
}

/// Layered-oxide cathode: gentle sloping background with one ordering
/// transition near y = 0.22, a steep delithiated rise at y -> 0 and a short
/// droop toward full lithiation. The droop is kept narrow so the discharged
/// endpoint stays pinned by the anode, which is what makes top-of-charge
/// features track lithium loss.
fn layered_oxide_potential(y: f64) -> f64 {
    3.45 + 0.70 * (1.0 - y) + 0.11 * logistic((0.22 - y) / 0.025) + 0.25 * (-y / 0.05).exp()
        - 0.25 * (-(1.0 - y) / 0.02).exp()
}

/// Full-cell model: electrode pair, lithium inventory, impedance, and the
/// thermal lump used while charging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellChemistry {
    pub anode: OcpCurve,
    pub cathode: OcpCurve,
    /// Fresh electrode capacities in ampere-hours.
    pub anode_capacity_ah: f64,
    pub cathode_capacity_ah: f64,
    /// Fresh cyclable lithium in ampere-hours; degradation scales this down.
    pub lithium_inventory_ah: f64,
    pub nominal_capacity_ah: f64,
    pub v_min: f64,
    /// CC/CV transition and full-charge voltage.
    pub v_max: f64,
    /// Ohmic resistance at the reference temperature.
    pub r0_ohm: f64,
    /// RC overpotential pairs (resistance, capacitance).
    pub rc_pairs: Vec<(f64, f64)>,
    /// Resistance grows as exp(k * (1/T - 1/Tref)); k in kelvin.
    pub r_activation_k: f64,
    pub reference_temp_c: f64,
    /// Rate-heterogeneity smearing width in ampere-hours per unit C-rate.
    /// Smearing widens and flattens differential-curve features at higher
    /// current, which a pure ohmic shift cannot do.
    pub smear_ah_per_c: f64,
    /// Extra smearing per kelvin below the reference temperature.
    pub smear_cold_per_k: f64,
    /// CV phase ends when current falls to this fraction of nominal.
    pub taper_current_c: f64,
    /// Lumped thermal parameters while charging.
    pub heat_capacity_j_per_k: f64,
    pub cooling_w_per_k: f64,
}

impl CellChemistry {
    /// Layered-oxide / graphite cell whose lithium inventory is solved so the
    /// fresh low-rate capacity equals `nominal_ah` exactly.
    pub fn nmc_graphite(nominal_ah: f64) -> Result<Self> {
        let mut chem = Self {
            anode: OcpCurve::from_fn(graphite_potential, 2001),
            cathode: OcpCurve::from_fn(layered_oxide_potential, 2001),
            anode_capacity_ah: 1.10 * nominal_ah,
            cathode_capacity_ah: 1.12 * nominal_ah,
            lithium_inventory_ah: 0.0,
            nominal_capacity_ah: nominal_ah,
            v_min: 3.0,
            v_max: 4.2,
            r0_ohm: 0.015 / nominal_ah * 5.0,
            rc_pairs: vec![(0.008 / nominal_ah * 5.0, 6000.0 * nominal_ah / 5.0)],
            r_activation_k: 2200.0,
            reference_temp_c: 25.0,
            smear_ah_per_c: 0.024 * nominal_ah,
            smear_cold_per_k: 0.02,
            taper_current_c: 0.05,
            heat_capacity_j_per_k: 180.0 * nominal_ah / 5.0,
            cooling_w_per_k: 0.9 * nominal_ah / 5.0,
        };
        chem.lithium_inventory_ah = solve_inventory(&chem, nominal_ah)?;
        Ok(chem)
    }

    /// Ohmic resistance at a given temperature.
    pub fn r0_at(&self, temp_c: f64) -> f64 {
        let t_k = temp_c + 273.15;
        let t_ref = self.reference_temp_c + 273.15;
        self.r0_ohm * (self.r_activation_k * (1.0 / t_k - 1.0 / t_ref)).exp()
    }

    /// Smearing width in ampere-hours for a given rate and temperature.
    pub fn smear_sigma_ah(&self, c_rate: f64, temp_c: f64) -> f64 {
        let cold = 1.0 + self.smear_cold_per_k * (self.reference_temp_c - temp_c).max(0.0);
        self.smear_ah_per_c * c_rate.abs() * cold
    }
}

/// Degradation state as physical mechanisms: loss of lithium inventory and
/// loss of active material per electrode, all as fractions in [0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationState {
    pub lli: f64,
    pub lam_anode: f64,
    pub lam_cathode: f64,
}

impl DegradationState {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lli", self.lli),
            ("lam_anode", self.lam_anode),
            ("lam_cathode", self.lam_cathode),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Electrode operating window for a (chemistry, degradation) pair.
///
/// The state variable is lithium in the anode, `l`, in ampere-hours:
/// anode stoichiometry x = l / qa, cathode y = (inventory - l) / qc. The
/// full-cell open-circuit voltage is strictly increasing in `l`, so the
/// discharged and charged endpoints are unique.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElectrodeWindow {
    pub qa: f64,
    pub qc: f64,
    pub inventory: f64,
    /// `l` at the discharged endpoint (open-circuit voltage = v_min).
    pub l_min: f64,
    /// `l` at the charged endpoint (open-circuit voltage = v_max).
    pub l_max: f64,
    pub capacity_ah: f64,
}

impl ElectrodeWindow {
    pub fn soc_to_l(&self, soc_pct: f64) -> f64 {
        self.l_min + soc_pct / 100.0 * self.capacity_ah
    }

    pub fn l_to_soc(&self, l: f64) -> f64 {
        (l - self.l_min) / self.capacity_ah * 100.0
    }
}

/// Open-circuit voltage as a function of anode lithium `l`.
pub fn ocv_at(chem: &CellChemistry, window: &ElectrodeWindow, l: f64) -> f64 {
    let x = l / window.qa;
    let y = (window.inventory - l) / window.qc;
    chem.cathode.eval(y) - chem.anode.eval(x)
}

fn bisect(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    // f(lo) <= 0 <= f(hi) by caller contract.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Resolve the electrode operating window for a degraded cell.
pub fn electrode_window(chem: &CellChemistry, deg: &DegradationState) -> Result<ElectrodeWindow> {
    deg.validate()?;
    let qa = chem.anode_capacity_ah * (1.0 - deg.lam_anode);
    let qc = chem.cathode_capacity_ah * (1.0 - deg.lam_cathode);
    let inventory = chem.lithium_inventory_ah * (1.0 - deg.lli);
    if inventory <= 0.0 || inventory >= qa + qc {
        return Err(Error::Domain(format!(
            "lithium inventory {inventory:.3} Ah infeasible for electrode capacities {qa:.3} + {qc:.3}"
        )));
    }

    // Feasible range for l keeps both stoichiometries in [0, 1].
    let l_lo = (inventory - qc).max(0.0);
    let l_hi = qa.min(inventory);
    let probe = ElectrodeWindow {
        qa,
        qc,
        inventory,
        l_min: 0.0,
        l_max: 0.0,
        capacity_ah: 0.0,
    };
    let ocv = |l: f64| ocv_at(chem, &probe, l);

    let l_min = if ocv(l_lo) >= chem.v_min {
        l_lo
    } else {
        bisect(l_lo, l_hi, |l| ocv(l) - chem.v_min)
    };
    let l_max = if ocv(l_hi) <= chem.v_max {
        l_hi
    } else {
        bisect(l_lo, l_hi, |l| ocv(l) - chem.v_max)
    };
    let capacity_ah = l_max - l_min;
    if capacity_ah <= 0.0 {
        return Err(Error::Domain(
            "degraded cell has no usable window between v_min and v_max".into(),
        ));
    }
    Ok(ElectrodeWindow {
        qa,
        qc,
        inventory,
        l_min,
        l_max,
        capacity_ah,
    })
}

/// Low-rate capacity between the voltage limits, the hidden truth the
/// simulator registers per emitted file.
pub fn true_capacity(chem: &CellChemistry, deg: &DegradationState) -> Result<f64> {
    Ok(electrode_window(chem, deg)?.capacity_ah)
}

fn solve_inventory(chem: &CellChemistry, target_ah: f64) -> Result<f64> {
    let total = chem.anode_capacity_ah + chem.cathode_capacity_ah;
    let capacity_for = |n: f64| -> f64 {
        let mut probe = chem.clone();
        probe.lithium_inventory_ah = n;
        true_capacity(&probe, &DegradationState::default()).unwrap_or(0.0)
    };
    // Scan the rising branch for a bracket, then bisect inside it.
    let steps = 400;
    let mut prev_n = 0.02 * total;
    let mut prev_cap = capacity_for(prev_n);
    for i in 1..=steps {
        let n = 0.02 * total + (0.96 * total) * i as f64 / steps as f64;
        let cap = capacity_for(n);
        if prev_cap < target_ah && cap >= target_ah {
            let lo = prev_n;
            let hi = n;
            let n_star = bisect(lo, hi, |n| capacity_for(n) - target_ah);
            return Ok(n_star);
        }
        if cap < prev_cap && prev_cap < target_ah {
            break;
        }
        prev_n = n;
        prev_cap = cap;
    }
    Err(Error::Config(format!(
        "nominal capacity {target_ah} Ah unreachable for this electrode pair"
    )))
}

/// Solve the degradation state whose true capacity hits a target health
/// percentage. Active-material losses are tied to lithium loss by the given
/// ratios, modeling one consistent aging family.
pub fn degradation_for_soh(
    chem: &CellChemistry,
    soh_pct: f64,
    lam_anode_ratio: f64,
    lam_cathode_ratio: f64,
) -> Result<DegradationState> {
    if !(10.0..=100.0).contains(&soh_pct) {
        return Err(Error::Domain(format!("target health {soh_pct}% out of range")));
    }
    let target = soh_pct / 100.0 * chem.nominal_capacity_ah;
    let make = |lli: f64| DegradationState {
        lli,
        lam_anode: (lam_anode_ratio * lli).min(0.95),
        lam_cathode: (lam_cathode_ratio * lli).min(0.95),
    };
    if soh_pct >= 100.0 {
        return Ok(make(0.0));
    }
    // Capacity decreases in lli; bisect on the sign-flipped difference.
    let lli = bisect(0.0, 0.6, |lli| {
        let cap = true_capacity(chem, &make(lli)).unwrap_or(0.0);
        target - cap
    });
    Ok(make(lli))
}

/// Open-circuit voltage table over `l`, optionally smeared by a Gaussian
/// kernel in the lithium coordinate. Smearing models cell-internal rate
/// heterogeneity: parallel regions charge slightly out of step, so sharp
/// staging features blur as current grows.
pub(crate) fn smeared_ocv_table(
    chem: &CellChemistry,
    window: &ElectrodeWindow,
    sigma_ah: f64,
    pad_ah: f64,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let lo = window.l_min - pad_ah;
    let hi = window.l_max + pad_ah;
    let dl = (hi - lo) / (n - 1) as f64;
    let ls: Vec<f64> = (0..n).map(|i| lo + i as f64 * dl).collect();
    let raw: Vec<f64> = ls.iter().map(|&l| ocv_at(chem, window, l)).collect();
    if sigma_ah <= 0.0 {
        return (ls, raw);
    }
    let half = ((4.0 * sigma_ah / dl).ceil() as usize).max(1);
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|j| {
            let z = (j as f64 - half as f64) * dl / sigma_ah;
            (-0.5 * z * z).exp()
        })
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let smeared: Vec<f64> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, &k) in kernel.iter().enumerate() {
                let idx = (i + j).saturating_sub(half).min(n - 1);
                acc += k * raw[idx];
            }
            acc / ksum
        })
        .collect();
    (ls, smeared)
}
