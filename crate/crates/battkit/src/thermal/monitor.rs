//! Streaming anomaly monitor over batched sensor windows.
//!
//! Each batch slices every temperature channel into one equal-length
//! window, clusters the windows by shape, and flags sensors on two
//! criteria:
//!
//! 1. membership change: a sensor stops clustering with the peers it
//!    held in the predecessor batch or in the frozen reference
//!    partition (abrupt respectively gradual divergence), and
//! 2. fitting-error rise: a sensor's distance to its assigned centroid
//!    exceeds its own trailing median by a factor or by an absolute
//!    margin.
//!
//! Membership is compared through co-membership retention (which of the
//! sensor's old cluster-mates still sit with it) rather than raw labels,
//! so the criterion survives label permutations between batches. A
//! seceding sensor that founds its own singleton cluster fits that
//! centroid perfectly and is invisible to the error criterion; retention
//! is what catches it.
//!
//! Healthy packs often carry a single shape family, in which case the
//! clustering splits noise and the centroids collapse onto each other.
//! The raw labels of such a batch are arbitrary, so the partition is
//! canonicalized to one cluster before it is stored or compared: the
//! baseline then says "everyone moves together", and a sensor seceding
//! from it later loses all of its mates at once. Batches with no common
//! shape at all (flat duty, noise-dominated windows) carry no
//! differential signal, so batches whose median distance is high flag
//! nothing and leave the monitor state unchanged.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::TelemetrySample;
use crate::thermal::kshape::{kshape_cluster, ClusterConfig};
use crate::thermal::shape::{sbd, znormalize};

pub const MONITOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    /// Samples per analysis window.
    pub window: usize,
    /// Samples between consecutive window origins; smaller than `window`
    /// gives overlapping batches and finer detection granularity.
    pub stride: usize,
    pub clusters: usize,
    pub max_iterations: usize,
    /// Passed through to the clustering; batch windows share timestamps,
    /// so genuine alignment shifts are small.
    pub max_shift_fraction: f64,
    pub seed: u64,
    /// Per-sensor error history depth, in batches.
    pub history: usize,
    /// Consecutive clean, informative batches before the reference
    /// partition freezes and the gradual membership comparison arms.
    pub warmup: usize,
    /// History entries required before the error criterion arms for a
    /// sensor.
    pub min_history: usize,
    /// Error rise fires when distance exceeds the sensor's trailing
    /// median by this factor...
    pub rise_factor: f64,
    /// ...provided it also exceeds this floor (the factor alone is
    /// meaningless at the noise floor)...
    pub abs_floor: f64,
    /// ...or when it exceeds the trailing median by this margin.
    pub rise_abs: f64,
    /// Centroids closer than this have collapsed into one shape family;
    /// the batch partition then canonicalizes to a single cluster.
    pub min_centroid_separation: f64,
    /// A batch whose median distance exceeds this has no common shape;
    /// nothing is flagged and the monitor state does not roll forward.
    pub max_informative_median: f64,
    /// Membership change fires when fewer than this fraction of a
    /// sensor's former cluster-mates still cluster with it.
    pub flip_retention: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window: 60,
            stride: 15,
            clusters: 2,
            max_iterations: 30,
            max_shift_fraction: 0.25,
            seed: 0,
            history: 48,
            warmup: 24,
            min_history: 4,
            rise_factor: 3.0,
            abs_floor: 0.05,
            rise_abs: 0.15,
            min_centroid_separation: 0.1,
            max_informative_median: 0.5,
            flip_retention: 0.5,
        }
    }
}

/// One sensor's slice of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalWindow {
    pub sensor: usize,
    pub values: Vec<f64>,
}

/// Equal-length windows for one time slice, tagged with the slice start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowBatch {
    pub origin_s: f64,
    pub windows: Vec<SignalWindow>,
}

/// Which detection criterion a verdict rests on. When both fire in one
/// batch, the membership change wins the label; per-sensor evidence
/// keeps the full picture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyCriterion {
    MembershipChange,
    FittingErrorRise,
    None,
}

/// Per-sensor evidence for one batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorVerdict {
    pub sensor: usize,
    pub cluster: usize,
    /// Shape distance to the assigned centroid.
    pub distance: f64,
    /// Distance minus the sensor's trailing median; absent until the
    /// history is deep enough to arm the error criterion.
    pub rise: Option<f64>,
    /// Window carried no shape (constant reading).
    pub static_window: bool,
    pub membership_flip: bool,
    pub error_excess: bool,
}

impl SensorVerdict {
    pub fn anomalous(&self) -> bool {
        self.membership_flip || self.error_excess
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub batch_index: usize,
    /// Start timestamp of the windows this verdict scores.
    pub origin_s: f64,
    pub triggered: bool,
    pub criterion: AnomalyCriterion,
    /// Sensors that fired either criterion, ranked by rise.
    pub offending_sensors: Vec<usize>,
    /// Monitored sensors absent from this batch; detection proceeded on
    /// the rest.
    pub missing_sensors: Vec<usize>,
    /// Every present window was static; no clustering was possible.
    pub degenerate: bool,
    /// Centroids are indistinguishable (single shape family).
    pub collapsed: bool,
    /// Median distance small enough for either criterion to mean
    /// anything.
    pub informative: bool,
    /// Cross-sensor median distance for this batch.
    pub median_distance: f64,
    pub sensors: Vec<SensorVerdict>,
}

/// Clustering state carried across batches: warm-start centroids, the
/// predecessor and frozen reference partitions, and per-sensor error
/// history. Serializable, so a process can persist it between polling
/// runs and resume where it left off.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeClusterState {
    pub version: u32,
    pub config: MonitorConfig,
    batch_index: usize,
    /// Sensor universe size, fixed by the first batch.
    n_sensors: usize,
    /// Warm-start centroids from the previous informative batch; they
    /// keep cluster identities continuous from one batch to the next.
    centroids: Option<Vec<Vec<f64>>>,
    /// Canonical memberships of the previous informative batch, by
    /// sensor id; collapsed batches store a single-family partition.
    predecessor: Option<Vec<Option<usize>>>,
    /// Canonical partition frozen after a clean, informative warm-up;
    /// never modified after.
    reference: Option<Vec<Option<usize>>>,
    clean_streak: usize,
    /// Per-sensor distance history over informative batches.
    error_history: Vec<VecDeque<f64>>,
}

impl ShapeClusterState {
    pub fn new(config: MonitorConfig) -> Self {
        Self {
            version: MONITOR_FORMAT_VERSION,
            config,
            batch_index: 0,
            n_sensors: 0,
            centroids: None,
            predecessor: None,
            reference: None,
            clean_streak: 0,
            error_history: Vec::new(),
        }
    }

    pub fn batches_seen(&self) -> usize {
        self.batch_index
    }

    pub fn reference_frozen(&self) -> bool {
        self.reference.is_some()
    }

    /// Score one batch and roll the state forward.
    ///
    /// Windows must share one length and carry distinct sensor ids drawn
    /// from the universe established by the first batch; monitored
    /// sensors missing from the batch are reported in the verdict and
    /// detection proceeds on the rest.
    pub fn detect(&mut self, batch: &WindowBatch) -> Result<AnomalyVerdict> {
        if batch.windows.is_empty() {
            return Err(Error::EmptyInput("batch has no sensor windows".into()));
        }
        if self.n_sensors == 0 {
            self.n_sensors = 1 + batch
                .windows
                .iter()
                .map(|w| w.sensor)
                .max()
                .unwrap_or(0);
            self.error_history = vec![VecDeque::new(); self.n_sensors];
        }
        let mut seen = vec![false; self.n_sensors];
        for w in &batch.windows {
            if w.sensor >= self.n_sensors {
                return Err(Error::Schema(format!(
                    "sensor {} outside the monitored universe 0..{}",
                    w.sensor, self.n_sensors
                )));
            }
            if seen[w.sensor] {
                return Err(Error::Schema(format!("sensor {} appears twice in batch", w.sensor)));
            }
            seen[w.sensor] = true;
        }
        let missing_sensors: Vec<usize> = (0..self.n_sensors).filter(|&i| !seen[i]).collect();

        let n = batch.windows[0].values.len();
        if batch.windows.iter().any(|w| w.values.len() != n) {
            return Err(Error::Schema("windows in a batch must share one length".into()));
        }
        if let Some(centroids) = &self.centroids {
            if centroids.first().is_some_and(|c| c.len() != n) {
                return Err(Error::Schema(format!(
                    "window length {n} does not match monitor state built on {}",
                    centroids[0].len()
                )));
            }
        }

        let statics: Vec<bool> = batch.windows.iter().map(|w| znormalize(&w.values).1).collect();
        if statics.iter().all(|s| *s) {
            let sensors = batch
                .windows
                .iter()
                .map(|w| SensorVerdict {
                    sensor: w.sensor,
                    cluster: 0,
                    distance: 1.0,
                    rise: None,
                    static_window: true,
                    membership_flip: false,
                    error_excess: false,
                })
                .collect();
            let verdict = AnomalyVerdict {
                batch_index: self.batch_index,
                origin_s: batch.origin_s,
                triggered: false,
                criterion: AnomalyCriterion::None,
                offending_sensors: Vec::new(),
                missing_sensors,
                degenerate: true,
                collapsed: false,
                informative: false,
                median_distance: 1.0,
                sensors,
            };
            self.batch_index += 1;
            return Ok(verdict);
        }

        let cluster_config = ClusterConfig {
            clusters: self.config.clusters,
            max_iterations: self.config.max_iterations,
            max_shift_fraction: self.config.max_shift_fraction,
            seed: self.config.seed,
        };
        let values: Vec<Vec<f64>> = batch.windows.iter().map(|w| w.values.clone()).collect();
        let clustering = kshape_cluster(&values, &cluster_config, self.centroids.as_deref())?;

        let mut max_separation = 0.0f64;
        for a in 0..clustering.centroids.len() {
            for b in (a + 1)..clustering.centroids.len() {
                let d = sbd(&clustering.centroids[a], &clustering.centroids[b])?;
                max_separation = max_separation.max(d);
            }
        }
        let collapsed = max_separation < self.config.min_centroid_separation;

        let median_distance = median(&clustering.distances);
        let informative = median_distance <= self.config.max_informative_median;

        // Collapsed centroids mean the pack is one shape family and the
        // raw labels are a noise split, so the partition canonicalizes
        // to a single cluster before it is stored or compared. Against
        // such a one-family baseline a seceding sensor loses all of its
        // mates at once, which is exactly the membership signal.
        let mut current: Vec<Option<usize>> = vec![None; self.n_sensors];
        for (w, &m) in batch.windows.iter().zip(&clustering.memberships) {
            current[w.sensor] = Some(if collapsed { 0 } else { m });
        }

        let mut sensors: Vec<SensorVerdict> = batch
            .windows
            .iter()
            .enumerate()
            .map(|(idx, w)| {
                let distance = clustering.distances[idx];
                let hist = &self.error_history[w.sensor];
                let rise = (hist.len() >= self.config.min_history).then(|| {
                    let trailing: Vec<f64> = hist.iter().copied().collect();
                    distance - median(&trailing)
                });
                let error_excess = informative
                    && rise.is_some_and(|r| {
                        let trailing_median = distance - r;
                        (distance > trailing_median * self.config.rise_factor
                            && distance > self.config.abs_floor)
                            || r > self.config.rise_abs
                    });
                let broke_from = |partition: &Option<Vec<Option<usize>>>| {
                    partition.as_ref().is_some_and(|p| {
                        co_membership_retention(p, &current, w.sensor) < self.config.flip_retention
                    })
                };
                let membership_flip = informative
                    && !statics[idx]
                    && (broke_from(&self.reference) || broke_from(&self.predecessor));
                SensorVerdict {
                    sensor: w.sensor,
                    cluster: clustering.memberships[idx],
                    distance,
                    rise,
                    static_window: statics[idx],
                    membership_flip,
                    error_excess,
                }
            })
            .collect();

        // A pack-wide membership reshuffle is a clustering artifact (or a
        // duty regime change), not half the sensors faulting at once;
        // isolation needs a deviant minority, so flip storms are dropped.
        let flips = sensors.iter().filter(|s| s.membership_flip).count();
        if 2 * flips > batch.windows.len() {
            for s in &mut sensors {
                s.membership_flip = false;
            }
        }

        let mut offenders: Vec<&SensorVerdict> = sensors.iter().filter(|s| s.anomalous()).collect();
        offenders.sort_by(|a, b| {
            let ka = a.rise.unwrap_or(a.distance);
            let kb = b.rise.unwrap_or(b.distance);
            kb.total_cmp(&ka)
        });
        let offending_sensors: Vec<usize> = offenders.iter().map(|s| s.sensor).collect();
        let any_flip = sensors.iter().any(|s| s.membership_flip);
        let any_excess = sensors.iter().any(|s| s.error_excess);
        let criterion = if any_flip {
            AnomalyCriterion::MembershipChange
        } else if any_excess {
            AnomalyCriterion::FittingErrorRise
        } else {
            AnomalyCriterion::None
        };
        let triggered = !offending_sensors.is_empty();

        // The reference freezes after a clean, informative warm-up. For
        // a pack that idles as one family the frozen partition is the
        // canonical single cluster, which is precisely the baseline a
        // later secession breaks from. Uninformative batches pause the
        // streak; a trigger resets it.
        if self.reference.is_none() {
            if triggered {
                self.clean_streak = 0;
            } else if informative {
                self.clean_streak += 1;
                if self.clean_streak >= self.config.warmup {
                    self.reference = Some(current.clone());
                }
            }
        }

        // Shapeless batches would poison the baselines and the warm
        // start, so the state only rolls forward on informative ones.
        if informative {
            for (w, d) in batch.windows.iter().zip(&clustering.distances) {
                let hist = &mut self.error_history[w.sensor];
                hist.push_back(*d);
                while hist.len() > self.config.history {
                    hist.pop_front();
                }
            }
            self.centroids = Some(clustering.centroids);
            self.predecessor = Some(current);
        }

        let verdict = AnomalyVerdict {
            batch_index: self.batch_index,
            origin_s: batch.origin_s,
            triggered,
            criterion,
            offending_sensors,
            missing_sensors,
            degenerate: false,
            collapsed,
            informative,
            median_distance,
            sensors,
        };
        self.batch_index += 1;
        Ok(verdict)
    }

    /// Offending sensors of a triggered verdict, ranked by error rise
    /// (largest first; sensors without an armed history rank by raw
    /// distance). This is the order in which channels should be
    /// inspected.
    pub fn isolate(&self, verdict: &AnomalyVerdict) -> Vec<usize> {
        verdict.offending_sensors.clone()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let state: Self = serde_json::from_str(&text)?;
        if state.version != MONITOR_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "monitor state format {}, expected {MONITOR_FORMAT_VERSION}",
                state.version
            )));
        }
        Ok(state)
    }
}

/// Fraction of sensor `i`'s cluster-mates under `reference` that still
/// share its cluster under `current`, counting only mates present in
/// both partitions. 1.0 when the sensor has no comparable mates or is
/// absent from either partition.
fn co_membership_retention(
    reference: &[Option<usize>],
    current: &[Option<usize>],
    i: usize,
) -> f64 {
    let (Some(ri), Some(ci)) = (reference[i], current[i]) else {
        return 1.0;
    };
    let mut mates = 0usize;
    let mut kept = 0usize;
    for j in 0..reference.len() {
        if j == i {
            continue;
        }
        let (Some(rj), Some(cj)) = (reference[j], current[j]) else {
            continue;
        };
        if rj == ri {
            mates += 1;
            if cj == ci {
                kept += 1;
            }
        }
    }
    if mates == 0 {
        1.0
    } else {
        kept as f64 / mates as f64
    }
}

/// Slice a telemetry stream into per-sensor window batches with the
/// given stride: `origin` advances by `stride` samples per batch, so
/// `stride < window` yields overlapping windows. A sensor is omitted
/// from a batch when any of its readings in that span is flagged;
/// samples with a channel count different from the first sample are
/// dropped entirely.
pub fn stream_batches(
    samples: &[TelemetrySample],
    window: usize,
    stride: usize,
) -> Result<Vec<WindowBatch>> {
    if window < 4 {
        return Err(Error::Config(format!("window must be at least 4 samples, got {window}")));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let usable: Vec<&TelemetrySample> =
        samples.iter().filter(|s| !s.temperatures.is_empty()).collect();
    let Some(first) = usable.first() else {
        return Err(Error::EmptyInput("no samples with temperatures".into()));
    };
    let n_sensors = first.temperatures.len();
    let usable: Vec<&TelemetrySample> = usable
        .into_iter()
        .filter(|s| s.temperatures.len() == n_sensors)
        .collect();

    let mut batches = Vec::new();
    let mut start = 0usize;
    while start + window <= usable.len() {
        let chunk = &usable[start..start + window];
        let mut windows = Vec::with_capacity(n_sensors);
        for sensor in 0..n_sensors {
            if chunk.iter().any(|s| s.flags.bad_temperatures.contains(&sensor)) {
                continue;
            }
            windows.push(SignalWindow {
                sensor,
                values: chunk.iter().map(|s| s.temperatures[sensor]).collect(),
            });
        }
        if !windows.is_empty() {
            batches.push(WindowBatch { origin_s: chunk[0].timestamp, windows });
        }
        start += stride;
    }
    Ok(batches)
}

fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
