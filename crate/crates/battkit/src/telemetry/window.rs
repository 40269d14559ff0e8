use serde::{Deserialize, Serialize};

use super::TelemetrySample;

/// Which per-sample signal family to slice into windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorSelector {
    AllTemperatures,
    Temperatures(Vec<usize>),
    AllCellVoltages,
    CellVoltages(Vec<usize>),
    PackVoltage,
    PackCurrent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowingConfig {
    /// Points per window.
    pub window_len: usize,
    /// Grid points between consecutive window starts.
    pub stride: usize,
    /// Uniform grid step in seconds; irregular input is linearly
    /// interpolated onto this grid.
    pub dt_s: f64,
    /// Peak-to-peak range below which a window is marked static.
    pub static_ppk: f64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self {
            window_len: 60,
            stride: 15,
            dt_s: 60.0,
            static_ppk: 0.2,
        }
    }
}

/// One uniformly sampled slice of one sensor's signal.
///
/// Windows from the same call share a common grid, so equal `start_index`
/// means equal time coverage across sensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalWindow {
    pub sensor_id: u32,
    /// Window start as an index on the common grid.
    pub start_index: usize,
    /// Timestamp of the first point, epoch seconds.
    pub origin_s: f64,
    pub dt_s: f64,
    pub values: Vec<f64>,
    /// Peak-to-peak range below the configured floor; static windows carry
    /// no usable shape.
    pub is_static: bool,
}

impl SignalWindow {
    /// Timestamp of the last point in the window. Detection verdicts are
    /// stamped with this time: nothing is known before the window closes.
    pub fn end_s(&self) -> f64 {
        self.origin_s + (self.values.len().saturating_sub(1)) as f64 * self.dt_s
    }
}

/// Linear interpolation over `(ts, vs)` with strictly increasing `ts`,
/// clamped to the end values outside the span.
pub fn interp_at(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    debug_assert_eq!(ts.len(), vs.len());
    match ts.binary_search_by(|probe| probe.total_cmp(&t)) {
        Ok(i) => vs[i],
        Err(0) => vs[0],
        Err(i) if i == ts.len() => vs[ts.len() - 1],
        Err(i) => {
            let w = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
            vs[i - 1] + w * (vs[i] - vs[i - 1])
        }
    }
}

/// Interpolate a series onto a uniform grid of `n` points starting at `t0`.
pub fn resample_series(ts: &[f64], vs: &[f64], t0: f64, dt_s: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| interp_at(ts, vs, t0 + i as f64 * dt_s)).collect()
}

fn sensor_series(
    samples: &[TelemetrySample],
    selector: &SensorSelector,
) -> Vec<(u32, Vec<f64>, Vec<f64>)> {
    let indexed = |pick: &dyn Fn(&TelemetrySample, usize) -> Option<f64>,
                   count: usize,
                   ids: Option<&[usize]>| {
        let ids: Vec<usize> = match ids {
            Some(list) => list.to_vec(),
            None => (0..count).collect(),
        };
        ids.into_iter()
            .map(|sensor| {
                let mut ts = Vec::new();
                let mut vs = Vec::new();
                for s in samples {
                    if let Some(v) = pick(s, sensor) {
                        ts.push(s.timestamp);
                        vs.push(v);
                    }
                }
                (sensor as u32, ts, vs)
            })
            .collect::<Vec<_>>()
    };

    let max_temps = samples.iter().map(|s| s.temperatures.len()).max().unwrap_or(0);
    let max_cells = samples.iter().map(|s| s.cell_voltages.len()).max().unwrap_or(0);
    let temp_pick = |s: &TelemetrySample, i: usize| -> Option<f64> {
        s.temperatures
            .get(i)
            .copied()
            .filter(|v| v.is_finite() && s.flags.temperature(i))
    };
    let cell_pick = |s: &TelemetrySample, i: usize| -> Option<f64> {
        s.cell_voltages
            .get(i)
            .copied()
            .filter(|v| v.is_finite() && s.flags.cell_voltage(i))
    };

    match selector {
        SensorSelector::AllTemperatures => indexed(&temp_pick, max_temps, None),
        SensorSelector::Temperatures(ids) => indexed(&temp_pick, max_temps, Some(ids)),
        SensorSelector::AllCellVoltages => indexed(&cell_pick, max_cells, None),
        SensorSelector::CellVoltages(ids) => indexed(&cell_pick, max_cells, Some(ids)),
        SensorSelector::PackVoltage => indexed(
            &|s, _| s.flags.pack_voltage().then_some(s.pack_voltage).filter(|v| v.is_finite()),
            1,
            None,
        ),
        SensorSelector::PackCurrent => indexed(
            &|s, _| s.flags.pack_current().then_some(s.pack_current).filter(|v| v.is_finite()),
            1,
            None,
        ),
    }
}

/// Slice per-sensor windows on a common uniform grid.
///
/// The grid starts at the first sample and steps by `dt_s`. A sensor
/// contributes a window only when its own valid readings cover the window's
/// full span; sensors never borrow data across their first or last valid
/// point. Output is ordered by `(start_index, sensor_id)`.
pub fn window_signals(
    samples: &[TelemetrySample],
    selector: &SensorSelector,
    config: &WindowingConfig,
) -> Vec<SignalWindow> {
    let mut out = Vec::new();
    if samples.is_empty() || config.window_len < 2 || config.stride == 0 {
        return out;
    }
    let t0 = samples[0].timestamp;
    let t_end = samples[samples.len() - 1].timestamp;
    let n_grid = ((t_end - t0) / config.dt_s).floor() as usize + 1;
    if n_grid < config.window_len {
        return out;
    }

    let series = sensor_series(samples, selector);
    let mut start = 0usize;
    while start + config.window_len <= n_grid {
        let w_begin = t0 + start as f64 * config.dt_s;
        let w_end = t0 + (start + config.window_len - 1) as f64 * config.dt_s;
        for (sensor_id, ts, vs) in &series {
            if ts.len() < 2 || ts[0] > w_begin || ts[ts.len() - 1] < w_end {
                continue;
            }
            let values = resample_series(ts, vs, w_begin, config.dt_s, config.window_len);
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            out.push(SignalWindow {
                sensor_id: *sensor_id,
                start_index: start,
                origin_s: w_begin,
                dt_s: config.dt_s,
                values,
                is_static: (hi - lo) < config.static_ppk,
            });
        }
        start += config.stride;
    }
    out
}
