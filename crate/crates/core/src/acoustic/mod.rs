//! Acoustic models: tied-state classifiers over synthetic frames.

mod model;
mod tying;

pub use model::{
    frame_error, per_class_error_delta, posteriors, train_acoustic_model, train_monolingual,
    train_pooled_model, union_inventory, AcousticModel, AmConfig, DegradationTable, FrameErrors,
    ModelMeta, PhonemeDelta, PooledPart, POOLED_NAME,
};
pub use tying::{class_count_for, tie_states, TiedStateInventory, DEFAULT_MIN_SOLO_FRAMES};
