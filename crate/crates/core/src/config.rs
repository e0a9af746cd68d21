//! Declarative experiment configuration.
//!
//! The canonical text form is the TOML serialization of [`ExperimentConfig`]
//! with fields in declaration order and the output directory blanked. Its
//! SHA-256 is the config hash stamped on every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::{AmConfig, POOLED_NAME};
use crate::error::{Error, Result};
use crate::fusion::grid_steps;
use crate::mapping::MapConfig;
use crate::rng::derive_seed;
use crate::synth::FamilyConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_frames: usize,
    pub seed: u64,
    pub split_seed: u64,
}

impl CorpusConfig {
    pub fn total_frames(&self) -> usize {
        self.train_frames + self.val_frames + self.test_frames
    }

    /// Train/val/test fractions of the sampled corpus.
    pub fn fractions(&self) -> [f64; 3] {
        let n = self.total_frames() as f64;
        [
            self.train_frames as f64 / n,
            self.val_frames as f64 / n,
            self.test_frames as f64 / n,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSettings {
    pub grid_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Lowest-entropy probe classes kept in each posteriorgram.
    pub probe_top_n: usize,
    /// Mapped classes listed per probe row.
    pub probe_top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    /// Master seed; [`ExperimentConfig::reseed`] derives every other seed from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub family: FamilyConfig,
    pub corpus: CorpusConfig,
    pub acoustic: AmConfig,
    pub mapping: MapConfig,
    pub fusion: FusionSettings,
    pub analysis: AnalysisSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::standard(20240611)
    }
}

impl ExperimentConfig {
    /// Three languages, 60k/2k/4k frames each, drift 0.5.
    pub fn standard(seed: u64) -> Self {
        let mut cfg = Self {
            format_version: CONFIG_VERSION,
            seed,
            output_dir: PathBuf::from("out"),
            family: FamilyConfig::standard(0.5, 0),
            corpus: CorpusConfig {
                train_frames: 60_000,
                val_frames: 2_000,
                test_frames: 4_000,
                seed: 0,
                split_seed: 0,
            },
            acoustic: AmConfig::default(),
            mapping: MapConfig::default(),
            fusion: FusionSettings { grid_step: 0.1 },
            analysis: AnalysisSettings {
                probe_top_n: 100,
                probe_top_k: 10,
            },
        };
        cfg.reseed(seed);
        cfg
    }

    /// A few-second variant of [`ExperimentConfig::standard`] for tests and smoke runs.
    pub fn small(seed: u64) -> Self {
        let mut cfg = Self::standard(seed);
        cfg.family.phoneme_counts = vec![12; 3];
        cfg.family.biphones_per_language = 60;
        cfg.family.dim = 8;
        cfg.corpus.train_frames = 4_000;
        cfg.corpus.val_frames = 400;
        cfg.corpus.test_frames = 800;
        cfg.acoustic.hidden_layers = vec![24];
        cfg.acoustic.train.max_epochs = 3;
        cfg.mapping.train.max_epochs = 3;
        cfg.fusion.grid_step = 0.25;
        cfg.analysis.probe_top_n = 20;
        cfg.analysis.probe_top_k = 5;
        cfg
    }

    /// Sets the master seed and rederives every stage seed from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.family.seed = derive_seed(seed, "family");
        self.corpus.seed = derive_seed(seed, "corpus");
        self.corpus.split_seed = derive_seed(seed, "split");
        self.acoustic.train.rng_seed = derive_seed(seed, "acoustic");
        self.mapping.train.rng_seed = derive_seed(seed, "mapping");
    }

    pub fn languages(&self) -> &[String] {
        &self.family.languages
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config format_version {} is not supported (expected {CONFIG_VERSION})",
                self.format_version
            )));
        }
        self.family.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.family.languages.len() < 2 {
            return Err(Error::Config("at least two languages are needed".into()));
        }
        for name in &self.family.languages {
            let path_safe = !name.is_empty()
                && name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
            if !path_safe || name == POOLED_NAME {
                return Err(Error::Config(format!(
                    "language name {name:?} must be lowercase [a-z0-9_] and not {POOLED_NAME:?}"
                )));
            }
        }
        let c = &self.corpus;
        if c.train_frames == 0 || c.val_frames == 0 || c.test_frames == 0 {
            return Err(Error::Config("train, val and test frame counts must be positive".into()));
        }
        if !(self.acoustic.tying_fraction > 0.0 && self.acoustic.tying_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "tying_fraction {} outside (0, 1]",
                self.acoustic.tying_fraction
            )));
        }
        self.acoustic.train.validate()?;
        self.mapping.train.validate()?;
        grid_steps(self.fusion.grid_step)?;
        if self.analysis.probe_top_n == 0 || self.analysis.probe_top_k == 0 {
            return Err(Error::Config("probe_top_n and probe_top_k must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    /// Canonical text with the output directory blanked, so the same
    /// experiment written to two places yields identical bytes.
    pub fn canonical_toml(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.to_toml()
    }

    /// SHA-256 of [`ExperimentConfig::canonical_toml`].
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_toml()?.as_bytes())))
    }
}
