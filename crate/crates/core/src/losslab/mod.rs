//! From raw samples to labeled relative losses.
//!
//! 1. [`detect_all`] decides indoor/outdoor status per sample from the
//!    Gaussian position mass over nearby footprints.
//! 2. [`pair_and_compute_loss`] forms O2I (indoor, outdoor) and I2I
//!    (indoor, indoor, same building) pairs on the same cell and band and
//!    computes the distance-normalized loss in dB/m.
//! 3. [`fit_quantizer`] stabilizes losses with a shifted Box-Cox transform and
//!    clusters them with 1-D k-means into low/medium/high.
//! 4. [`zscore_filter`] drops per-building outliers before aggregation.

mod detect;
mod pair;
mod quantizer;
mod zscore;

use thiserror::Error;

pub use detect::{
    detect_all, detect_indoor, BuildingIndex, DetectionRule, IndoorVerdict, CANDIDATE_SIGMAS,
    CENTROID_THRESHOLD, P50_THRESHOLD,
};
pub use pair::{pair_and_compute_loss, relative_loss, LossObservation, PairConfig};
pub use quantizer::{
    fit_box_cox, fit_quantizer, kmeans_1d, label_losses, silhouette_1d, BoxCox, KMeans1d,
    LossQuantizer, QuantizerConfig, SweepEntry, MIN_FIT_VALUES,
};
pub use zscore::{zscore_filter, ZScoreConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("need at least {need} loss values, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("loss values must be finite")]
    NonFinite,
    #[error("every k-means restart ended with an empty cluster (k = {k})")]
    DegenerateCluster { k: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
