//! Shape clustering of equal-length windows.
//!
//! Cluster centroids are extracted as the dominant eigenvector of the
//! centered correlation matrix of the member shapes, each member first
//! aligned to the previous centroid. That vector maximizes total squared
//! correlation with the members, which is exactly what the shape distance
//! scores, so assignment and extraction optimize one objective and the
//! loop is guarded to never let it rise.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thermal::shape::znormalize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub clusters: usize,
    pub max_iterations: usize,
    /// Largest alignment shift, as a fraction of the window length.
    /// Batched sensor windows share timestamps, so genuine lags are small;
    /// unbounded shifts let a bad centroid zero-fill most of a member
    /// during alignment and then reproduce itself from the wreckage.
    pub max_shift_fraction: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            clusters: 2,
            max_iterations: 30,
            max_shift_fraction: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Clustering {
    /// Zero-mean, unit-norm shapes, one per cluster.
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input series.
    pub memberships: Vec<usize>,
    /// Shape distance from each series to its centroid. Static series
    /// carry no shape and sit at the uncorrelated distance 1.
    pub distances: Vec<f64>,
    /// Sum of distances after each accepted iteration, non-increasing.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&f64::INFINITY)
    }
}

/// Correlation candidates between pre-normalized shapes. The public entry
/// points renormalize their inputs, so this operates on already-normalized
/// vectors directly. Zero (static) vectors correlate with nothing and
/// score 0 at shift 0.
pub(crate) fn best_cc_normalized(xn: &[f64], yn: &[f64], max_shift: usize) -> (f64, i64) {
    if xn.iter().all(|v| *v == 0.0) || yn.iter().all(|v| *v == 0.0) {
        return (0.0, 0);
    }
    let cc = crate::thermal::shape::correlations(xn, yn);
    let n = xn.len();
    let m = cc.len();
    let mut best = cc[0];
    let mut best_shift = 0i64;
    for j in 1..=max_shift.min(n - 1) as i64 {
        let adv = cc[m - j as usize];
        if adv > best {
            best = adv;
            best_shift = -j;
        }
        let del = cc[j as usize];
        if del > best {
            best = del;
            best_shift = j;
        }
    }
    (best.clamp(-1.0, 1.0), best_shift)
}

fn shifted(yn: &[f64], shift: i64) -> Vec<f64> {
    let n = yn.len() as i64;
    let mut out = vec![0.0; yn.len()];
    for i in 0..n {
        let src = i - shift;
        if src >= 0 && src < n {
            out[i as usize] = yn[src as usize];
        }
    }
    out
}

/// Dominant eigenvector of Q AᵀA Q over the aligned member shapes, where
/// Q centers; rows of `aligned` are the members.
fn extract_shape(aligned: &[Vec<f64>], previous: Option<&[f64]>) -> Option<Vec<f64>> {
    let rows = aligned.len();
    if rows == 0 {
        return None;
    }
    let n = aligned[0].len();
    let a = DMatrix::from_fn(rows, n, |r, c| aligned[r][c]);
    let s = a.tr_mul(&a);
    // Q S Q with Q = I - 11ᵀ/n, applied as explicit row/column centering.
    let col_mean = s.row_mean();
    let mut m = s;
    for r in 0..n {
        for c in 0..n {
            m[(r, c)] -= col_mean[c];
        }
    }
    let row_mean: Vec<f64> = (0..n).map(|r| m.row(r).sum() / n as f64).collect();
    for r in 0..n {
        for c in 0..n {
            m[(r, c)] -= row_mean[r];
        }
    }
    // Symmetrize away centering round-off before the eigensolver.
    let mt = m.transpose();
    let m = (m + mt) * 0.5;

    let eig = m.symmetric_eigen();
    let mut ix = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[ix] {
            ix = i;
        }
    }
    let mut v: Vec<f64> = eig.eigenvectors.column(ix).iter().cloned().collect();

    // Eigenvector sign is arbitrary. Anchor it to the aligned member mean:
    // the summary of a cluster must correlate positively with its own
    // members, and that anchor stays meaningful even when the members have
    // drifted orthogonal to the previous centroid (anchoring on the previous
    // centroid alone lets a near-zero dot flip the sign, and a negated
    // centroid is self-reinforcing because bounded alignment shifts cannot
    // undo a negation). Fall back to the previous centroid only when the
    // member mean itself is ambiguous, then to first-nonzero-positive.
    let mut mean = vec![0.0; n];
    for row in aligned {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut orient = dot(&v, &mean);
    if orient.abs() <= 1e-9 {
        if let Some(p) = previous {
            orient = dot(&v, p);
        }
    }
    if orient.abs() <= 1e-9 {
        orient = v.iter().copied().find(|x| *x != 0.0).unwrap_or(1.0);
    }
    if orient < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let (vn, vstatic) = znormalize(&v);
    if vstatic {
        return None;
    }
    Some(vn)
}

fn assign(
    normalized: &[Vec<f64>],
    centroids: &[Vec<f64>],
    max_shift: usize,
) -> (Vec<usize>, Vec<f64>) {
    let mut memberships = Vec::with_capacity(normalized.len());
    let mut distances = Vec::with_capacity(normalized.len());
    for xn in normalized {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let (cc, _) = best_cc_normalized(c, xn, max_shift);
            let d = (1.0 - cc).clamp(0.0, 2.0);
            // Strict improvement keeps ties on the lower cluster id.
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        memberships.push(best);
        distances.push(best_d);
    }
    (memberships, distances)
}

/// (centroids, memberships, distances) snapshot of the best iterate.
type Partition = (Vec<Vec<f64>>, Vec<usize>, Vec<f64>);

/// Cluster equal-length windows into `config.clusters` shape groups.
///
/// `warm_start` seeds the centroids (say, from the previous batch of a
/// monitoring stream), which both speeds convergence and keeps cluster
/// identities stable across batches. Without it, membership is dealt
/// round-robin over a seeded shuffle.
pub fn kshape_cluster(
    series: &[Vec<f64>],
    config: &ClusterConfig,
    warm_start: Option<&[Vec<f64>]>,
) -> Result<Clustering> {
    let k = config.clusters;
    if k == 0 {
        return Err(Error::Config("need at least one cluster".into()));
    }
    if series.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} series cannot fill {k} clusters",
            series.len()
        )));
    }
    let n = series[0].len();
    if n < 2 {
        return Err(Error::InsufficientData("windows need at least two samples".into()));
    }
    if series.iter().any(|s| s.len() != n) {
        return Err(Error::Schema("all windows must share one length".into()));
    }

    let max_shift = ((n as f64 * config.max_shift_fraction).floor() as usize).clamp(1, n - 1);
    let normalized: Vec<Vec<f64>> = series.iter().map(|s| znormalize(s).0).collect();
    if normalized.iter().all(|s| s.iter().all(|v| *v == 0.0)) {
        return Err(Error::Domain("every window is constant; nothing has shape".into()));
    }

    let mut centroids: Vec<Vec<f64>>;
    let mut memberships: Vec<usize>;
    let mut distances: Vec<f64>;

    match warm_start {
        Some(seeds) if seeds.len() == k => {
            centroids = seeds.iter().map(|c| znormalize(c).0).collect();
            (memberships, distances) = assign(&normalized, &centroids, max_shift);
        }
        _ => {
            let mut order: Vec<usize> = (0..series.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            order.shuffle(&mut rng);
            memberships = vec![0; series.len()];
            for (pos, &ix) in order.iter().enumerate() {
                memberships[ix] = pos % k;
            }
            distances = vec![2.0; series.len()];
            centroids = vec![vec![0.0; n]; k];
        }
    }

    let mut objective_history = Vec::new();
    let mut best_objective = f64::INFINITY;
    let mut best_state: Option<Partition> = None;
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        iterations += 1;

        // Shape extraction with members aligned to the current centroid.
        // Shifts are centered on their median so a centroid that drifted
        // off-phase is pulled back onto the family consensus instead of
        // reproducing its own displacement from zero-filled members.
        let mut next_centroids = centroids.clone();
        for j in 0..k {
            let with_shape: Vec<&Vec<f64>> = normalized
                .iter()
                .zip(&memberships)
                .filter(|(s, &m)| m == j && s.iter().any(|v| *v != 0.0))
                .map(|(s, _)| s)
                .collect();
            let mut shifts: Vec<i64> = if centroids[j].iter().any(|v| *v != 0.0) {
                with_shape
                    .iter()
                    .map(|s| best_cc_normalized(&centroids[j], s, max_shift).1)
                    .collect()
            } else {
                vec![0; with_shape.len()]
            };
            let median = {
                let mut sorted = shifts.clone();
                sorted.sort_unstable();
                sorted.get(sorted.len() / 2).copied().unwrap_or(0)
            };
            shifts.iter_mut().for_each(|s| *s -= median);
            let members: Vec<Vec<f64>> = with_shape
                .iter()
                .zip(&shifts)
                .map(|(s, &sh)| shifted(s, sh))
                .collect();
            if let Some(c) = extract_shape(&members, Some(&centroids[j])) {
                next_centroids[j] = c;
            }
        }

        let (next_memberships, next_distances) = assign(&normalized, &next_centroids, max_shift);

        // Reseed any emptied cluster with the worst-fitting series.
        let mut next_memberships = next_memberships;
        let mut next_distances = next_distances;
        for (j, cj) in next_centroids.iter_mut().enumerate() {
            if next_memberships.contains(&j) {
                continue;
            }
            let worst = next_distances
                .iter()
                .enumerate()
                .filter(|(i, _)| normalized[*i].iter().any(|v| *v != 0.0))
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i);
            if let Some(w) = worst {
                *cj = normalized[w].clone();
                next_memberships[w] = j;
                next_distances[w] = 0.0;
            }
        }

        let objective: f64 = next_distances.iter().sum();
        // Extraction and assignment optimize slightly different scores, so
        // the sum of distances can rise transiently (reseeding does this on
        // purpose). Keep iterating through rises but only ever record and
        // return improving states.
        if objective < best_objective {
            best_objective = objective;
            objective_history.push(objective);
            best_state = Some((
                next_centroids.clone(),
                next_memberships.clone(),
                next_distances.clone(),
            ));
        }
        let converged = next_memberships == memberships;
        centroids = next_centroids;
        memberships = next_memberships;
        distances = next_distances;
        if converged {
            break;
        }
    }

    if let Some((c, m, d)) = best_state {
        centroids = c;
        memberships = m;
        distances = d;
    }
    Ok(Clustering {
        centroids,
        memberships,
        distances,
        objective_history,
        iterations,
    })
}
