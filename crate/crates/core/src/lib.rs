//! Data-driven cross-lingual acoustic-phonetic similarity on synthetic languages.
//!
//! Per-language frame classifiers ("acoustic models") are trained over tied
//! biphone states. Mapping networks translate one model's posteriors into
//! another model's class space, and the mean KL divergence between target and
//! mapped posteriors serves as a similarity measure. The same mapped posteriors
//! are fused with the target model's by a weighted sum.

pub mod acoustic;
pub(crate) mod codec;
pub mod config;
pub mod error;
pub mod fusion;
pub mod mapping;
pub mod math;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod similarity;
pub mod stream;
pub mod synth;
pub mod table;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision probability vector.
pub type ProbVec = math::ProbVector<f64>;
/// Single-precision probability vector.
pub type ProbVec32 = math::ProbVector<f32>;
/// Double-precision network, the type every pipeline stage uses.
pub type Network = math::NetworkParams<f64>;
/// Single-precision network.
pub type Network32 = math::NetworkParams<f32>;
