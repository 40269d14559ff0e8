//! Feedforward estimator network and its runtime guards.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::soc::features::{build_features, FeatureConfig};
use crate::telemetry::TelemetrySample;

pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Per-input z-score parameters, fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).ok_or_else(|| {
            Error::InsufficientData("cannot fit normalization on an empty set".into())
        })?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(mean.iter()) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            // Constant columns pass through unscaled rather than exploding.
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-9 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(self.std.iter()))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// One state-of-charge estimate tied to a source timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocEstimate {
    pub timestamp: f64,
    pub soc_pct: f64,
    /// Set when the full-charge condition pinned the estimate to 100.
    pub overridden: bool,
}

/// Multilayer perceptron mapping a measurement history to state of charge.
///
/// Hidden layers use tanh, the output is linear. Weights are stored
/// row-major per layer (output index major), matching the flat parameter
/// order used by the trainer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SocNetwork {
    pub version: u32,
    /// Sizes from input to output, e.g. `[15, 12, 8, 1]`.
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub normalization: Normalization,
    pub feature_config: FeatureConfig,
    /// Capacity reference for the full-charge current threshold.
    pub nominal_capacity_ah: f64,
    /// Full-charge override: voltage at or above this...
    pub override_voltage_v: f64,
    /// ...with current magnitude at or below this C-rate fraction...
    pub override_current_c: f64,
    /// ...sustained this long pins the estimate to 100.
    pub override_sustain_s: f64,
    /// Estimates may move at most this fast, in points per second.
    pub max_slew_pct_per_s: f64,
}

impl SocNetwork {
    /// Fresh network with small uniform weights. The output bias starts at
    /// the label midpoint so early residuals are centered.
    pub fn new(layer_sizes: &[usize], feature_config: FeatureConfig, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config("network needs input and output layers".into()));
        }
        if layer_sizes[0] != feature_config.input_dim() {
            return Err(Error::Config(format!(
                "input layer {} does not match feature dimension {}",
                layer_sizes[0],
                feature_config.input_dim()
            )));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::Config("output layer must have one unit".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.random_range(-scale..scale)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        biases.last_mut().unwrap()[0] = 50.0;
        Ok(Self {
            version: NETWORK_FORMAT_VERSION,
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            normalization: Normalization::identity(layer_sizes[0]),
            feature_config,
            nominal_capacity_ah: 5.0,
            override_voltage_v: 4.15,
            override_current_c: 0.05,
            override_sustain_s: 30.0,
            max_slew_pct_per_s: 0.25,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    /// Flat parameter vector: per layer, weights row-major then biases.
    pub(crate) fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub(crate) fn set_params_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        debug_assert_eq!(at, flat.len());
    }

    /// Forward pass on a pre-normalized input, keeping every activation for
    /// backpropagation. `activations[0]` is the input itself.
    pub(crate) fn forward_cached(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(z.to_vec());
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let prev = &acts[l];
            let mut next = vec![0.0; fan_out];
            for (j, nj) in next.iter_mut().enumerate() {
                let row = &self.weights[l][j * fan_in..(j + 1) * fan_in];
                let mut acc = self.biases[l][j];
                for (w, a) in row.iter().zip(prev.iter()) {
                    acc += w * a;
                }
                // Hidden layers squash, the output layer stays linear.
                *nj = if l + 1 < layers { acc.tanh() } else { acc };
            }
            acts.push(next);
        }
        acts
    }

    /// Gradient of the scalar output with respect to every parameter, in
    /// flat order. `acts` must come from [`Self::forward_cached`].
    pub(crate) fn output_gradient(&self, acts: &[Vec<f64>]) -> Vec<f64> {
        let layers = self.weights.len();
        // delta[l] = d(output) / d(pre-activation of layer l+1).
        let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); layers];
        deltas[layers - 1] = vec![1.0];
        for l in (0..layers - 1).rev() {
            let fan_out = self.layer_sizes[l + 1];
            let mut d = vec![0.0; fan_out];
            for (j, dj) in d.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, dk) in deltas[l + 1].iter().enumerate() {
                    acc += self.weights[l + 1][k * fan_out + j] * dk;
                }
                let a = acts[l + 1][j];
                *dj = acc * (1.0 - a * a);
            }
            deltas[l] = d;
        }
        let mut grad = Vec::with_capacity(self.param_count());
        for (dl, al) in deltas.iter().zip(acts) {
            for dj in dl {
                for ai in al {
                    grad.push(dj * ai);
                }
            }
            grad.extend_from_slice(dl);
        }
        grad
    }

    /// Estimate for one raw feature row, unclamped.
    pub fn forward(&self, x: &[f64]) -> f64 {
        let z = self.normalization.apply(x);
        let acts = self.forward_cached(&z);
        acts.last().unwrap()[0]
    }

    /// Estimate for one raw feature row, clamped to the physical range.
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        self.forward(x).clamp(0.0, 100.0)
    }

    /// Estimate a full telemetry series.
    ///
    /// Applies, in order: the network, the physical clamp, the full-charge
    /// override (voltage high and current tapered for a sustained spell
    /// pins the estimate to 100), and a slew limiter that keeps successive
    /// estimates from jumping faster than `max_slew_pct_per_s`. The
    /// override bypasses the limiter: a detected full charge is a hard
    /// reanchor.
    pub fn predict_series(&self, samples: &[TelemetrySample]) -> Result<Vec<SocEstimate>> {
        let rows = build_features(samples, &self.feature_config)?;
        let taper_a = self.override_current_c * self.nominal_capacity_ah;
        let mut out: Vec<SocEstimate> = Vec::with_capacity(rows.len());
        let mut full_since: Option<f64> = None;
        for row in rows {
            let mut soc = self.predict_one(&row.values);
            let (v_now, i_now) = (row.values[0], row.values[1]);
            if v_now >= self.override_voltage_v && i_now.abs() <= taper_a {
                full_since.get_or_insert(row.timestamp);
            } else {
                full_since = None;
            }
            let overridden =
                full_since.is_some_and(|t0| row.timestamp - t0 >= self.override_sustain_s);
            if overridden {
                soc = 100.0;
            } else if let Some(prev) = out.last() {
                let max_step = self.max_slew_pct_per_s * (row.timestamp - prev.timestamp);
                soc = prev.soc_pct + (soc - prev.soc_pct).clamp(-max_step, max_step);
            }
            out.push(SocEstimate {
                timestamp: row.timestamp,
                soc_pct: soc,
                overridden,
            });
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let net: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if net.version != NETWORK_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported network format version {}",
                net.version
            )));
        }
        for (l, pair) in net.layer_sizes.windows(2).enumerate() {
            if net.weights.get(l).map(Vec::len) != Some(pair[0] * pair[1])
                || net.biases.get(l).map(Vec::len) != Some(pair[1])
            {
                return Err(Error::Schema("network weight shapes are inconsistent".into()));
            }
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::TelemetrySample;

    fn tiny_net() -> SocNetwork {
        let fc = FeatureConfig {
            history: 0,
            stride_s: 30.0,
        };
        let mut net = SocNetwork::new(&[3, 2, 1], fc, 7).unwrap();
        net.weights[0] = vec![0.1, -0.2, 0.3, 0.0, 0.4, -0.5];
        net.biases[0] = vec![0.05, -0.1];
        net.weights[1] = vec![1.5, -2.0];
        net.biases[1] = vec![10.0];
        net
    }

    #[test]
    #[allow(clippy::neg_multiply)] // spelled-out w*x products mirror the weight rows
    fn forward_matches_hand_computation() {
        let net = tiny_net();
        let x = [1.0, 2.0, -1.0];
        let h1 = (0.1 * 1.0 - 0.2 * 2.0 + 0.3 * -1.0 + 0.05_f64).tanh();
        let h2 = (0.0 * 1.0 + 0.4 * 2.0 - 0.5 * -1.0 - 0.1_f64).tanh();
        let expect = 1.5 * h1 - 2.0 * h2 + 10.0;
        assert!((net.forward(&x) - expect).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_central_difference() {
        let fc = FeatureConfig {
            history: 1,
            stride_s: 30.0,
        };
        let net = SocNetwork::new(&[6, 5, 4, 1], fc, 42).unwrap();
        let x: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.8).collect();
        let acts = net.forward_cached(&x);
        let grad = net.output_gradient(&acts);
        let params = net.params_flat();
        let h = 1e-5;
        for p in 0..params.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut pp = params.clone();
            pp[p] += h;
            plus.set_params_flat(&pp);
            pp[p] -= 2.0 * h;
            minus.set_params_flat(&pp);
            let fd = (plus.forward_cached(&x).last().unwrap()[0]
                - minus.forward_cached(&x).last().unwrap()[0])
                / (2.0 * h);
            assert!(
                (grad[p] - fd).abs() < 1e-7 * (1.0 + fd.abs()),
                "param {p}: analytic {} vs fd {fd}",
                grad[p]
            );
        }
    }

    #[test]
    fn save_load_reproduces_predictions_exactly() {
        let net = tiny_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        let back = SocNetwork::load(&path).unwrap();
        for trial in 0..20 {
            let x = [trial as f64 * 0.37, -1.0 + trial as f64 * 0.11, 0.5];
            assert_eq!(net.forward(&x).to_bits(), back.forward(&x).to_bits());
        }
    }

    #[test]
    fn normalization_fit_is_zero_mean_unit_std() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, 7.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let norm = Normalization::fit(&refs).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| norm.apply(r)).collect();
        let mean0: f64 = z.iter().map(|r| r[0]).sum::<f64>() / 50.0;
        let var0: f64 = z.iter().map(|r| r[0] * r[0]).sum::<f64>() / 50.0;
        assert!(mean0.abs() < 1e-12);
        assert!((var0 - 1.0).abs() < 1e-12);
        // Constant column: untouched rather than divided by zero.
        assert!((z[3][1] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn full_charge_override_pins_and_slew_limits_release() {
        let mut net = tiny_net();
        // Zero weights: the network always says 50.
        net.weights = vec![vec![0.0; 6], vec![0.0; 2]];
        net.biases = vec![vec![0.0; 2], vec![50.0]];
        net.feature_config = FeatureConfig {
            history: 0,
            stride_s: 1.0,
        };
        net.nominal_capacity_ah = 5.0;
        net.override_sustain_s = 5.0;
        net.max_slew_pct_per_s = 0.5;
        // 60 s at full-charge conditions, then voltage sags.
        let samples: Vec<TelemetrySample> = (0..90)
            .map(|t| {
                let (v, i) = if t < 60 { (4.19, 0.1) } else { (3.9, 0.0) };
                TelemetrySample::new(t as f64, i, v, vec![], vec![25.0])
            })
            .collect();
        let est = net.predict_series(&samples).unwrap();
        assert!(!est[3].overridden, "sustain not yet met");
        assert!(est[10].overridden);
        assert_eq!(est[10].soc_pct, 100.0);
        // After release the limiter walks down at 0.5 points per second.
        let post = &est[65];
        assert!(!post.overridden);
        assert!((est[60].soc_pct - 99.5).abs() < 1e-9, "got {}", est[60].soc_pct);
        assert!(post.soc_pct > 95.0 && post.soc_pct < 100.0);
    }
}
