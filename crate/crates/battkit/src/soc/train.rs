//! Damped least-squares training for the estimator network.
//!
//! The trainer minimizes the sum of squared state-of-charge residuals over
//! the training split. Each iteration solves the damped normal equations
//! `(J'J + lambda I) d = J'r` built from analytic output gradients; steps
//! are accepted only when the training loss drops, otherwise the damping
//! grows and the step is retried. Small damping approaches Gauss-Newton,
//! large damping approaches a short gradient step, so accepted-loss
//! monotonicity holds by construction.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::soc::features::{Dataset, FeatureConfig};
use crate::soc::network::{Normalization, SocNetwork};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_factor: f64,
    pub max_damping: f64,
    /// Stop after this many accepted steps without validation improvement.
    pub patience: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![12, 8],
            seed: 11,
            max_iterations: 200,
            initial_damping: 1e-3,
            damping_factor: 10.0,
            max_damping: 1e10,
            patience: 25,
            train_fraction: 0.70,
            validation_fraction: 0.15,
        }
    }
}

/// Residual statistics in state-of-charge points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub rmse: f64,
    pub max_abs_error: f64,
    /// Fraction of estimates within five points of truth.
    pub within_5_points: f64,
    pub count: usize,
}

impl EvalMetrics {
    pub fn from_errors(errors: impl Iterator<Item = f64>) -> Result<Self> {
        let mut sq = 0.0;
        let mut max = 0.0_f64;
        let mut within = 0usize;
        let mut count = 0usize;
        for e in errors {
            sq += e * e;
            max = max.max(e.abs());
            within += usize::from(e.abs() <= 5.0);
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyInput("no residuals to score".into()));
        }
        Ok(Self {
            rmse: (sq / count as f64).sqrt(),
            max_abs_error: max,
            within_5_points: within as f64 / count as f64,
            count,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub accepted_steps: usize,
    pub final_damping: f64,
    /// Training RMSE after each accepted step; non-increasing.
    pub loss_history: Vec<f64>,
    pub train: EvalMetrics,
    pub validation: EvalMetrics,
    pub test: EvalMetrics,
}

/// Deterministic shuffled split into train / validation / test index sets.
/// Fractions apply to the shuffled order; every index lands in exactly one
/// set and all three are non-empty for `n >= 3` and sane fractions.
pub fn split_indices(
    n: usize,
    seed: u64,
    train_fraction: f64,
    validation_fraction: f64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 rows to split, got {n}"
        )));
    }
    if !(train_fraction > 0.0
        && validation_fraction > 0.0
        && train_fraction + validation_fraction < 1.0)
    {
        return Err(Error::Config("split fractions must be positive and sum below 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0513);
    order.shuffle(&mut rng);
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 2);
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - n_train - 1);
    let val_end = n_train + n_val;
    Ok((
        order[..n_train].to_vec(),
        order[n_train..val_end].to_vec(),
        order[val_end..].to_vec(),
    ))
}

/// Score a network on raw (unnormalized) feature rows.
pub fn evaluate(net: &SocNetwork, features: &[Vec<f64>], labels: &[f64]) -> Result<EvalMetrics> {
    EvalMetrics::from_errors(
        features
            .iter()
            .zip(labels)
            .map(|(x, y)| net.predict_one(x) - y),
    )
}

struct SplitView<'a> {
    rows: Vec<&'a [f64]>,
    labels: Vec<f64>,
}

fn view<'a>(data: &'a Dataset, idx: &[usize]) -> SplitView<'a> {
    SplitView {
        rows: idx.iter().map(|&i| data.features[i].as_slice()).collect(),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
    }
}

fn sum_squared_error(net: &SocNetwork, rows: &[Vec<f64>], labels: &[f64]) -> f64 {
    rows.iter()
        .zip(labels)
        .map(|(z, y)| {
            let o = net.forward_cached(z).last().unwrap()[0];
            (o - y) * (o - y)
        })
        .sum()
}

fn rmse(net: &SocNetwork, rows: &[Vec<f64>], labels: &[f64]) -> f64 {
    (sum_squared_error(net, rows, labels) / rows.len() as f64).sqrt()
}

/// Train a network on a labeled dataset.
///
/// The normalization is fitted on the training split only, then baked into
/// the returned network. The returned weights are the ones with the best
/// validation RMSE seen during the run, not necessarily the last accepted
/// step.
pub fn train(
    dataset: &Dataset,
    feature_config: FeatureConfig,
    config: &TrainConfig,
) -> Result<(SocNetwork, TrainReport)> {
    if dataset.features.len() != dataset.labels.len() {
        return Err(Error::Schema("feature and label counts differ".into()));
    }
    let dim = feature_config.input_dim();
    if dataset.features.iter().any(|r| r.len() != dim) {
        return Err(Error::Schema(format!("every feature row must have {dim} entries")));
    }
    let (idx_train, idx_val, idx_test) = split_indices(
        dataset.len(),
        config.seed,
        config.train_fraction,
        config.validation_fraction,
    )?;

    let train_view = view(dataset, &idx_train);
    let norm = Normalization::fit(&train_view.rows)?;
    // Pre-normalize each split once; the inner loop then skips it.
    let normalize = |v: &SplitView| -> Vec<Vec<f64>> {
        v.rows.iter().map(|r| norm.apply(r)).collect()
    };
    let z_train = normalize(&train_view);
    let y_train = train_view.labels;
    let val_view = view(dataset, &idx_val);
    let z_val = normalize(&val_view);
    let y_val = val_view.labels;

    let mut sizes = vec![dim];
    sizes.extend_from_slice(&config.hidden_layers);
    sizes.push(1);
    let mut net = SocNetwork::new(&sizes, feature_config, config.seed)?;
    net.normalization = norm.clone();

    let p = net.param_count();
    let n = z_train.len();
    let mut lambda = config.initial_damping;
    let mut sse = sum_squared_error(&net, &z_train, &y_train);
    let mut loss_history = vec![(sse / n as f64).sqrt()];
    let mut best = (rmse(&net, &z_val, &y_val), net.params_flat());
    let mut stale = 0usize;
    let mut iterations = 0usize;
    let mut accepted_steps = 0usize;

    'outer: for _ in 0..config.max_iterations {
        iterations += 1;
        // Build J (n x p) and the residual vector r = y - f(x).
        let mut jac = DMatrix::zeros(n, p);
        let mut res = DVector::zeros(n);
        for (i, z) in z_train.iter().enumerate() {
            let acts = net.forward_cached(z);
            res[i] = y_train[i] - acts.last().unwrap()[0];
            for (j, g) in net.output_gradient(&acts).into_iter().enumerate() {
                jac[(i, j)] = g;
            }
        }
        let jtj = jac.tr_mul(&jac);
        let jtr = jac.tr_mul(&res);

        loop {
            let mut damped = jtj.clone();
            for d in 0..p {
                damped[(d, d)] += lambda;
            }
            let step = match Cholesky::new(damped) {
                Some(ch) => ch.solve(&jtr),
                None => {
                    lambda *= config.damping_factor;
                    if lambda > config.max_damping {
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut params = DVector::from_vec(net.params_flat());
            params += &step;
            let mut candidate = net.clone();
            candidate.set_params_flat(params.as_slice());
            let candidate_sse = sum_squared_error(&candidate, &z_train, &y_train);
            if candidate_sse < sse {
                net = candidate;
                sse = candidate_sse;
                lambda = (lambda / config.damping_factor).max(1e-12);
                accepted_steps += 1;
                loss_history.push((sse / n as f64).sqrt());
                let val = rmse(&net, &z_val, &y_val);
                if val < best.0 {
                    best = (val, net.params_flat());
                    stale = 0;
                } else {
                    stale += 1;
                    if stale > config.patience {
                        break 'outer;
                    }
                }
                break;
            }
            lambda *= config.damping_factor;
            if lambda > config.max_damping {
                break 'outer;
            }
        }
    }

    net.set_params_flat(&best.1);
    let test_view = view(dataset, &idx_test);
    let score = |idx: &[usize]| -> Result<EvalMetrics> {
        let v = view(dataset, idx);
        EvalMetrics::from_errors(
            v.rows
                .iter()
                .zip(&v.labels)
                .map(|(x, y)| net.predict_one(x) - y),
        )
    };
    let report = TrainReport {
        iterations,
        accepted_steps,
        final_damping: lambda,
        loss_history,
        train: score(&idx_train)?,
        validation: score(&idx_val)?,
        test: EvalMetrics::from_errors(
            test_view
                .rows
                .iter()
                .zip(&test_view.labels)
                .map(|(x, y)| net.predict_one(x) - y),
        )?,
    };
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn split_covers_everything_once() {
        let (tr, va, te) = split_indices(100, 3, 0.7, 0.15).unwrap();
        assert_eq!(tr.len(), 70);
        assert_eq!(va.len(), 15);
        assert_eq!(te.len(), 15);
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        // Same seed, same split.
        let again = split_indices(100, 3, 0.7, 0.15).unwrap();
        assert_eq!(again.0, tr);
    }

    fn toy_dataset(n: usize, seed: u64) -> (Dataset, FeatureConfig) {
        // Smooth nonlinear target over a 3-input "no history" layout.
        let fc = FeatureConfig {
            history: 0,
            stride_s: 30.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Dataset::default();
        for _ in 0..n {
            let v: f64 = rng.random_range(3.0..4.2);
            let i: f64 = rng.random_range(0.0..2.5);
            let t: f64 = rng.random_range(10.0..40.0);
            let y = 50.0 + 45.0 * ((v - 3.6) * 3.0).tanh() - 2.0 * i + 0.1 * (t - 25.0);
            data.push(vec![v, i, t], y.clamp(0.0, 100.0));
        }
        (data, fc)
    }

    #[test]
    fn training_fits_a_smooth_map() {
        let (data, fc) = toy_dataset(400, 5);
        let config = TrainConfig {
            hidden_layers: vec![8, 6],
            max_iterations: 120,
            ..TrainConfig::default()
        };
        let (net, report) = train(&data, fc, &config).unwrap();
        assert!(report.test.rmse < 1.0, "test rmse {}", report.test.rmse);
        assert!(net.forward(&[3.9, 1.0, 25.0]).is_finite());
    }

    #[test]
    fn accepted_loss_never_increases() {
        for seed in [1, 2, 3] {
            let (data, fc) = toy_dataset(200, seed);
            let config = TrainConfig {
                hidden_layers: vec![6, 4],
                max_iterations: 60,
                seed,
                ..TrainConfig::default()
            };
            let (_, report) = train(&data, fc, &config).unwrap();
            for w in report.loss_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "loss rose: {} -> {}", w[0], w[1]);
            }
            assert!(report.accepted_steps > 0);
        }
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let (data, fc) = toy_dataset(150, 9);
        let config = TrainConfig {
            hidden_layers: vec![5],
            max_iterations: 30,
            ..TrainConfig::default()
        };
        let (a, _) = train(&data, fc, &config).unwrap();
        let (b, _) = train(&data, fc, &config).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
    }

    #[test]
    fn mismatched_rows_are_rejected() {
        let fc = FeatureConfig {
            history: 0,
            stride_s: 30.0,
        };
        let mut data = Dataset::default();
        data.push(vec![1.0, 2.0], 50.0); // wrong width
        data.push(vec![1.0, 2.0, 3.0], 50.0);
        data.push(vec![1.0, 2.0, 3.0], 50.0);
        assert!(train(&data, fc, &TrainConfig::default()).is_err());
    }
}
