//! State-of-charge estimation.
//!
//! A small feedforward network maps a short history of measured voltage,
//! current, and temperature to state of charge in percent. Training labels
//! come from coulomb counting anchored by known capacity, training itself
//! is damped least squares on analytic gradients, and runtime estimates
//! pass through a physical clamp, a full-charge override, and a slew
//! limiter before they are reported.

mod features;
mod network;
mod train;

pub use features::{
    build_features, coulomb_count, dataset_from_fleet, Dataset, FeatureConfig, FeatureRow,
};
pub use network::{Normalization, SocEstimate, SocNetwork, NETWORK_FORMAT_VERSION};
pub use train::{evaluate, split_indices, train, EvalMetrics, TrainConfig, TrainReport};
