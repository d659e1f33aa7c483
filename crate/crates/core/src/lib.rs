//! Hyperdimensional scan-parameter recommendation.
//!
//! Observation and instruction embeddings are projected to bipolar
//! hypervectors, fused, and matched against one associative memory per
//! scanner parameter.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod flywheel;
pub mod fusion;
pub mod hdc;
pub mod memory;
pub mod params;
pub mod rng;

pub use config::RunConfig;
pub use error::{Error, ModelFormatError, Result};
pub use fusion::{Embedding, EmbeddingKind, EmbeddingStore, FusionConfig, FusionStrategy, Modality};
pub use hdc::{Hypervector, ProjectionEncoder};
pub use memory::{Recommendation, ScanModel, TrainingConfig};
pub use params::{Param, ParameterConfig};
