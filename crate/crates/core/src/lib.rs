//! Self-supervised aggregation learning for anomaly detection.
//!
//! The engine trains a small dense autoencoder whose unit-sphere latents are
//! pulled toward their own memory-bank slot (instance discrimination) and
//! toward their nearest bank neighbors (aggregation). At inference a sample is
//! scored by a weighted angular k-nearest-neighbor vote against the normal
//! slots of the bank.
//!
//! Every numeric module is generic over [`Scalar`]; the aliases at the crate
//! root fix the scalar to `f64`, which is what training and the CLI use.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod dataprep;
mod error;
pub mod eval;
pub mod losses;
pub mod membank;
pub mod model;
pub mod ndgrad;
mod scalar;
pub mod scorer;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{dot, norm, Scalar};

pub type Tensor = ndgrad::Tensor<f64>;
pub type Graph = ndgrad::Graph<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type AdamState = model::AdamState<f64>;
pub type LatentVector = model::LatentVector<f64>;
pub type MemoryBank = membank::MemoryBank<f64>;
pub type SimilarityDistribution = membank::SimilarityDistribution<f64>;
pub type NeighborSet = membank::NeighborSet<f64>;
pub type LossBreakdown = losses::LossBreakdown<f64>;
pub type AnomalyScore = scorer::AnomalyScore<f64>;
pub type Image = dataprep::Image<f64>;
pub type Sample = dataprep::Sample<f64>;
pub type Trainer = trainer::Trainer<f64>;
