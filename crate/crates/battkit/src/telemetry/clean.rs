use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TelemetrySample;

/// Physical plausibility limits. Values outside a closed range are flagged
/// invalid, not altered.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitsConfig {
    pub pack_voltage_v: (f64, f64),
    pub cell_voltage_v: (f64, f64),
    pub temperature_c: (f64, f64),
    pub current_a: (f64, f64),
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self {
            pack_voltage_v: (0.0, 1500.0),
            cell_voltage_v: (0.5, 5.5),
            temperature_c: (-40.0, 200.0),
            current_a: (-2000.0, 2000.0),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CleanReport {
    pub rows_in: usize,
    pub rows_out: usize,
    /// Rows dropped because the timestamp was non-finite.
    pub bad_timestamp_dropped: usize,
    /// Rows dropped because a previous retained row had the same timestamp.
    pub duplicates_dropped: usize,
    /// Rows dropped because every field was invalid.
    pub all_invalid_dropped: usize,
    /// Rows that were out of order in the input and had to be re-sorted.
    pub reordered: usize,
    /// Field name -> number of values flagged invalid.
    pub fields_flagged: BTreeMap<String, usize>,
}

impl CleanReport {
    fn flag(&mut self, field: &str) {
        *self.fields_flagged.entry(field.to_string()).or_insert(0) += 1;
    }
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    v.is_finite() && v >= lo && v <= hi
}

/// Validate samples against limits and order them in time.
///
/// Total function: never fails. Output timestamps are strictly increasing
/// (stable sort, then keep-first on duplicates). Individual out-of-range or
/// non-finite fields are flagged invalid and left in place; a row is dropped
/// only when every field is invalid or its timestamp is unusable.
pub fn clean(samples: &[TelemetrySample], limits: &LimitsConfig) -> (Vec<TelemetrySample>, CleanReport) {
    let mut report = CleanReport {
        rows_in: samples.len(),
        ..CleanReport::default()
    };

    let mut work: Vec<TelemetrySample> = Vec::with_capacity(samples.len());
    for s in samples {
        if !s.timestamp.is_finite() {
            report.bad_timestamp_dropped += 1;
            continue;
        }
        work.push(s.clone());
    }

    report.reordered = work.windows(2).filter(|w| w[1].timestamp < w[0].timestamp).count();
    work.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));

    let mut out: Vec<TelemetrySample> = Vec::with_capacity(work.len());
    for mut s in work {
        if let Some(prev) = out.last() {
            if s.timestamp == prev.timestamp {
                report.duplicates_dropped += 1;
                continue;
            }
        }

        let mut any_valid = false;
        if !in_range(s.pack_current, limits.current_a) {
            if !s.flags.bad_pack_current {
                s.flags.bad_pack_current = true;
                report.flag("pack_current");
            }
        } else if s.flags.pack_current() {
            any_valid = true;
        }
        if !in_range(s.pack_voltage, limits.pack_voltage_v) {
            if !s.flags.bad_pack_voltage {
                s.flags.bad_pack_voltage = true;
                report.flag("pack_voltage");
            }
        } else if s.flags.pack_voltage() {
            any_valid = true;
        }
        for i in 0..s.cell_voltages.len() {
            if !in_range(s.cell_voltages[i], limits.cell_voltage_v) {
                if s.flags.cell_voltage(i) {
                    s.flags.bad_cell_voltages.push(i);
                    report.flag("cell_voltages");
                }
            } else if s.flags.cell_voltage(i) {
                any_valid = true;
            }
        }
        for i in 0..s.temperatures.len() {
            if !in_range(s.temperatures[i], limits.temperature_c) {
                if s.flags.temperature(i) {
                    s.flags.bad_temperatures.push(i);
                    report.flag("temperatures");
                }
            } else if s.flags.temperature(i) {
                any_valid = true;
            }
        }

        if any_valid {
            out.push(s);
        } else {
            report.all_invalid_dropped += 1;
        }
    }

    report.rows_out = out.len();
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, i: f64, v: f64, temp: f64) -> TelemetrySample {
        TelemetrySample::new(t, i, v, vec![v], vec![temp])
    }

    #[test]
    fn duplicate_timestamps_keep_first() {
        let samples = vec![
            sample(1.0, 1.0, 3.7, 25.0),
            sample(2.0, 2.0, 3.7, 25.0),
            sample(2.0, 9.0, 3.8, 26.0),
            sample(3.0, 3.0, 3.7, 25.0),
        ];
        let (out, report) = clean(&samples, &LimitsConfig::default());
        assert_eq!(out.len(), 3);
        assert_eq!(report.duplicates_dropped, 1);
        assert_eq!(out[1].pack_current, 2.0);
    }

    #[test]
    fn output_timestamps_strictly_increase() {
        let samples = vec![
            sample(3.0, 1.0, 3.7, 25.0),
            sample(1.0, 1.0, 3.7, 25.0),
            sample(2.0, 1.0, 3.7, 25.0),
            sample(2.0, 1.0, 3.7, 25.0),
        ];
        let (out, report) = clean(&samples, &LimitsConfig::default());
        assert!(out.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert!(report.reordered > 0);
    }

    #[test]
    fn out_of_range_fields_flagged_not_dropped() {
        let mut s = sample(1.0, 1.0, 3.7, 250.0);
        s.cell_voltages[0] = 9.9;
        let (out, report) = clean(&[s], &LimitsConfig::default());
        assert_eq!(out.len(), 1);
        assert!(!out[0].flags.temperature(0));
        assert!(!out[0].flags.cell_voltage(0));
        assert!(out[0].flags.pack_current());
        assert_eq!(report.fields_flagged["temperatures"], 1);
        assert_eq!(report.fields_flagged["cell_voltages"], 1);
        assert_eq!(out[0].mean_temperature(), None);
    }

    #[test]
    fn fully_invalid_rows_dropped() {
        let s = TelemetrySample::new(1.0, f64::NAN, f64::INFINITY, vec![], vec![]);
        let (out, report) = clean(&[s], &LimitsConfig::default());
        assert!(out.is_empty());
        assert_eq!(report.all_invalid_dropped, 1);
    }

    #[test]
    fn nonfinite_timestamp_dropped() {
        let s = sample(f64::NAN, 1.0, 3.7, 25.0);
        let (out, report) = clean(&[s], &LimitsConfig::default());
        assert!(out.is_empty());
        assert_eq!(report.bad_timestamp_dropped, 1);
    }
}
