//! Building-level radio-frequency loss classification.
//!
//! The crate turns passive UE measurements and public building metadata into
//! per-building, per-band outdoor-to-indoor (O2I) and indoor-to-indoor (I2I)
//! loss categories:
//!
//! * [`geoplane`]: planar polygon metrics, containment, Gaussian mass over a footprint.
//! * [`dataset`]: ingestion, metadata fusion, imputation and feature rows.
//! * [`losslab`]: indoor/outdoor detection, relative losses, Box-Cox + k-means labels.
//! * [`forest`]: random forest and gradient-boosted tree ensembles.
//! * [`ssl`]: self-training with domain-rule priors.
//! * [`metrics`]: accuracy, F1, entropy, MMPP, silhouette and majority voting.
//! * [`synthcity`]: seeded synthetic cities with ground truth.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod class;
pub mod dataset;
pub mod forest;
pub mod geoplane;
pub mod losslab;
pub mod metrics;
pub mod seed;
pub mod ssl;
pub mod synthcity;

pub use class::{LinkType, LossClass, N_CLASSES};
