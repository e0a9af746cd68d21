//! Numerical kernels: probability vectors, KL divergence, entropy, and
//! gradient-trained softmax networks. Generic over [`Scalar`](crate::Scalar).

pub mod checkpoint;
pub mod gradcheck;
pub mod network;
pub mod prob;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use gradcheck::{gradient_check, gradient_check_with};
pub use network::{forward_chunked, Activation, Gradients, NetworkParams};
pub use prob::{argmax, entropy, floor_renormalize, kl_divergence, mean_kl, softmax, ProbVector};
pub use train::{train, Samples, Targets, TrainConfig, TrainHistory, TrainOutcome};
