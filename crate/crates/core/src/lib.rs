//! Long-term average treatment effects from a short-term randomized trial
//! fused with a long-term observational sample.

pub mod analysis;
pub mod dataset;
pub mod design;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod nuisance;
pub mod rng;
pub mod simulation;

pub use dataset::{FusedDataset, Group, OutcomeFamily, Unit};
pub use estimators::{EstimatorKind, TauEstimate, VarianceMethod};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
