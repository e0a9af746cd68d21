//! Posterior streams: one probability vector per frame plus reference labels.
//!
//! Binary layout (`PMPS`, version 1, little-endian): magic, `u32` version,
//! `u32` frames T, `u32` classes K, T×K `f64` posteriors row-major, T `u32`
//! labels, `u8` label space (0 = tied class, 1 = biphone), `u32` name count
//! followed by length-prefixed UTF-8 names (model language, corpus language),
//! then the length-prefixed fingerprint of the corpus the stream was computed on.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::math::prob::{argmax, floor_renormalize};

pub const MAGIC: &[u8; 4] = b"PMPS";
pub const VERSION: u32 = 1;

/// Label of a frame whose biphone has no tied class in the model.
pub const NO_CLASS: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    /// Labels are tied-state classes of the producing model.
    TiedClass,
    /// Labels are biphone indices of the corpus language.
    Biphone,
}

impl LabelSpace {
    fn tag(self) -> u8 {
        match self {
            LabelSpace::TiedClass => 0,
            LabelSpace::Biphone => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(LabelSpace::TiedClass),
            1 => Ok(LabelSpace::Biphone),
            t => Err(Error::format("PMPS", format!("unknown label space tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStream {
    probs: Array2<f64>,
    labels: Vec<u32>,
    label_space: LabelSpace,
    model_language: String,
    corpus_language: String,
    corpus_fingerprint: String,
}

impl PosteriorStream {
    pub fn new(
        probs: Array2<f64>,
        labels: Vec<u32>,
        label_space: LabelSpace,
        model_language: impl Into<String>,
        corpus_language: impl Into<String>,
        corpus_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        Error::check_dim("stream labels", probs.nrows(), labels.len())?;
        if probs.ncols() == 0 {
            return Err(Error::InvalidArgument("stream has no classes".into()));
        }
        Ok(Self {
            probs: probs.as_standard_layout().into_owned(),
            labels,
            label_space,
            model_language: model_language.into(),
            corpus_language: corpus_language.into(),
            corpus_fingerprint: corpus_fingerprint.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.probs.row(t)
    }

    pub fn frame_slice(&self, t: usize) -> &[f64] {
        self.probs.row(t).to_slice().expect("standard layout")
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    pub fn model_language(&self) -> &str {
        &self.model_language
    }

    pub fn corpus_language(&self) -> &str {
        &self.corpus_language
    }

    pub fn corpus_fingerprint(&self) -> &str {
        &self.corpus_fingerprint
    }

    /// Argmax class of every frame; ties go to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().unwrap()))
            .collect()
    }

    /// Same stream with different posteriors (labels and provenance carried over).
    pub fn with_probs(&self, probs: Array2<f64>, model_language: impl Into<String>) -> Result<Self> {
        Self::new(
            probs,
            self.labels.clone(),
            self.label_space,
            model_language,
            self.corpus_language.clone(),
            self.corpus_fingerprint.clone(),
        )
    }

    /// Fails unless both streams were computed on the same corpus and have equal length.
    pub fn check_aligned(&self, other: &PosteriorStream) -> Result<()> {
        if self.corpus_fingerprint != other.corpus_fingerprint {
            return Err(Error::FingerprintMismatch {
                left: self.corpus_fingerprint.clone(),
                right: other.corpus_fingerprint.clone(),
            });
        }
        Error::check_dim("stream frame count", self.len(), other.len())
    }

    /// Checks that every frame is a distribution (within `1e-6`).
    pub fn validate(&self) -> Result<()> {
        for (t, row) in self.probs.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidProbability(format!("frame {t} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Floored copy of frame `t`, as used inside KL computations.
    pub fn floored_frame(&self, t: usize) -> Vec<f64> {
        floor_renormalize(self.frame_slice(t))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut e = Encoder::new(MAGIC, VERSION);
        e.len_u32(self.len())?;
        e.len_u32(self.classes())?;
        e.f64s(self.probs.iter().copied());
        for &l in &self.labels {
            e.u32(l);
        }
        e.u8(self.label_space.tag());
        e.u32(2);
        e.str(&self.model_language)?;
        e.str(&self.corpus_language)?;
        e.str(&self.corpus_fingerprint)?;
        Ok(e.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new("PMPS", bytes, MAGIC, VERSION)?;
        let frames = d.usize()?;
        let classes = d.usize()?;
        let values = d.f64s(frames * classes)?;
        let labels = (0..frames).map(|_| d.u32()).collect::<Result<Vec<_>>>()?;
        let space = LabelSpace::from_tag(d.u8()?)?;
        let names = d.usize()?;
        if names != 2 {
            return Err(Error::format("PMPS", format!("expected 2 language names, found {names}")));
        }
        let model = d.str()?;
        let corpus = d.str()?;
        let fingerprint = d.str()?;
        d.finish()?;
        let probs = Array2::from_shape_vec((frames, classes), values).expect("length checked");
        Self::new(probs, labels, space, model, corpus, fingerprint)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::decode(&fs::read(path)?)
    }
}
