//! Synthetic languages: phoneme inventories with controlled overlap, biphone
//! inventories, Gaussian emissions, and sampled frame corpora.

pub mod corpus;
pub mod family;
pub mod lang;

pub use corpus::{sample_corpus, split_corpus, CorpusPart, FrameCorpus};
pub use family::{make_language_family, FamilyConfig};
pub use lang::{Biphone, Emission, LanguageSpec, Phoneme};
