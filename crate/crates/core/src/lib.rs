//! Building paper/code consistency benchmarks and training consistency
//! classifiers.
//!
//! The pipeline turns structured paper text and Python repositories into
//! sentence and function units, retrieves candidate pairs, resolves expert
//! annotations, samples hard and random negatives, splits by project and
//! exports training artifacts. A native linear classifier trained with a
//! class-weighted focal loss, together with confusion-matrix metrics and a
//! threshold sweep, closes the loop.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! precisions used by the pipeline.

pub mod annotation;
pub mod classifier;
pub mod code_ingest;
pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod fixture;
pub mod eval;
pub mod pairing;
pub mod paper_ingest;
pub mod pipeline;
pub mod records;
pub mod scalar;
pub mod workspace;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

/// Stored embeddings are single precision.
pub type Embedding = embedding::EmbeddingVector<f32>;
pub type Model = classifier::ClassifierModel<f64>;
pub type Features = classifier::FeatureSet<f64>;
