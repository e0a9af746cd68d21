//! Labeled frame corpora sampled from a [`LanguageSpec`].
//!
//! Binary layout (`PMFC`, version 1, all little-endian): magic, `u32` version,
//! `u32` frame count T, `u32` dimension D, T×D `f64` features row-major,
//! T `u32` biphone labels, `u32` utterance count U, U `u32` utterance start
//! indices.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::family::sample_categorical;
use super::lang::LanguageSpec;
use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::rng::rng_for;

pub const MAGIC: &[u8; 4] = b"PMFC";
pub const VERSION: u32 = 1;

/// Segments drawn per utterance.
pub const SEGMENTS_PER_UTTERANCE: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameCorpus {
    language: String,
    features: Array2<f64>,
    labels: Vec<u32>,
    utterance_starts: Vec<usize>,
}

impl FrameCorpus {
    pub fn new(
        language: String,
        features: Array2<f64>,
        labels: Vec<u32>,
        utterance_starts: Vec<usize>,
    ) -> Result<Self> {
        Error::check_dim("corpus labels", features.nrows(), labels.len())?;
        let frames = labels.len();
        let sorted = utterance_starts.windows(2).all(|w| w[0] < w[1]);
        let starts_ok = utterance_starts.first().map_or(frames == 0, |&s| s == 0)
            && utterance_starts.last().is_none_or(|&s| s < frames);
        if !sorted || !starts_ok {
            return Err(Error::InvalidArgument(
                "utterance starts must be strictly increasing, begin at 0 and lie inside the corpus".into(),
            ));
        }
        Ok(Self {
            language,
            features: features.as_standard_layout().into_owned(),
            labels,
            utterance_starts,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn utterance_starts(&self) -> &[usize] {
        &self.utterance_starts
    }

    pub fn utterance_count(&self) -> usize {
        self.utterance_starts.len()
    }

    /// Frame range of utterance `u`.
    pub fn utterance(&self, u: usize) -> std::ops::Range<usize> {
        let start = self.utterance_starts[u];
        let end = self.utterance_starts.get(u + 1).copied().unwrap_or(self.len());
        start..end
    }

    /// Checks every label against the language's biphone inventory.
    pub fn validate_against(&self, lang: &LanguageSpec) -> Result<()> {
        Error::check_dim("corpus feature dimension", lang.dim(), self.dim())?;
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= lang.biphones().len()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside the {} biphones of {}",
                lang.biphones().len(),
                lang.name()
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut e = Encoder::new(MAGIC, VERSION);
        e.len_u32(self.len())?;
        e.len_u32(self.dim())?;
        e.f64s(self.features.iter().copied());
        for &l in &self.labels {
            e.u32(l);
        }
        e.len_u32(self.utterance_starts.len())?;
        for &s in &self.utterance_starts {
            e.len_u32(s)?;
        }
        Ok(e.finish())
    }

    pub fn decode(language: String, bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new("PMFC", bytes, MAGIC, VERSION)?;
        let frames = d.usize()?;
        let dim = d.usize()?;
        let values = d.f64s(frames * dim)?;
        let labels = (0..frames).map(|_| d.u32()).collect::<Result<Vec<_>>>()?;
        let utts = d.usize()?;
        let starts = (0..utts).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
        d.finish()?;
        let features = Array2::from_shape_vec((frames, dim), values).expect("length checked");
        Self::new(language, features, labels, starts)
            .map_err(|e| Error::format("PMFC", e.to_string()))
    }

    /// SHA-256 of the binary encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.encode().expect("corpus fits u32 sizes")))
    }

    /// Writes `<stem>.toml` and `<stem>.pmfc`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let manifest = CorpusManifest {
            format_version: VERSION,
            language: self.language.clone(),
            frames: self.len(),
            dim: self.dim(),
            utterances: self.utterance_count(),
            fingerprint: hex::encode(Sha256::digest(&bytes)),
        };
        fs::write(stem.with_extension("toml"), toml::to_string(&manifest)?)?;
        fs::write(stem.with_extension("pmfc"), bytes)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (mpath, bpath) = (stem.with_extension("toml"), stem.with_extension("pmfc"));
        for p in [&mpath, &bpath] {
            if !p.exists() {
                return Err(Error::MissingArtifact(p.clone()));
            }
        }
        let manifest: CorpusManifest = toml::from_str(&fs::read_to_string(&mpath)?)?;
        let corpus = Self::decode(manifest.language.clone(), &fs::read(&bpath)?)?;
        let found = corpus.fingerprint();
        if found != manifest.fingerprint {
            return Err(Error::ChecksumMismatch {
                path: bpath,
                expected: manifest.fingerprint,
                found,
            });
        }
        Ok(corpus)
    }

    /// Concatenates utterances `utts` (in the given order) into a new corpus.
    fn select_utterances(&self, utts: &[usize]) -> Self {
        let total: usize = utts.iter().map(|&u| self.utterance(u).len()).sum();
        let mut features = Array2::zeros((total, self.dim()));
        let mut labels = Vec::with_capacity(total);
        let mut starts = Vec::with_capacity(utts.len());
        let mut at = 0;
        for &u in utts {
            let r = self.utterance(u);
            starts.push(at);
            features
                .slice_mut(s![at..at + r.len(), ..])
                .assign(&self.features.slice(s![r.clone(), ..]));
            labels.extend_from_slice(&self.labels[r.clone()]);
            at += r.len();
        }
        Self {
            language: self.language.clone(),
            features,
            labels,
            utterance_starts: starts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub language: String,
    pub frames: usize,
    pub dim: usize,
    pub utterances: usize,
    pub fingerprint: String,
}

pub fn corpus_paths(stem: &Path) -> [PathBuf; 2] {
    [stem.with_extension("toml"), stem.with_extension("pmfc")]
}

/// Samples exactly `frames` labeled frames.
///
/// Segments pick a biphone by the language's biphone frequencies, last a
/// geometric number of frames with mean `mean_segment_frames`, and emit
/// i.i.d. draws from that biphone's diagonal Gaussian. Every
/// [`SEGMENTS_PER_UTTERANCE`] segments start a new utterance.
pub fn sample_corpus(lang: &LanguageSpec, frames: usize, seed: u64) -> Result<FrameCorpus> {
    if frames == 0 {
        return Err(Error::InvalidArgument("corpus needs at least one frame".into()));
    }
    let mut rng = rng_for(seed, &format!("corpus/{}", lang.name()));
    let mut cumulative = Vec::with_capacity(lang.frequencies().len());
    let mut acc = 0.0;
    for &f in lang.frequencies() {
        acc += f;
        cumulative.push(acc);
    }
    let p = 1.0 / lang.mean_segment_frames() as f64;
    let geometric = Geometric::new(p).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let dim = lang.dim();
    let mut features = Array2::zeros((frames, dim));
    let mut labels = Vec::with_capacity(frames);
    let mut starts = Vec::new();
    let mut segments = 0usize;
    while labels.len() < frames {
        if segments % SEGMENTS_PER_UTTERANCE == 0 {
            starts.push(labels.len());
        }
        segments += 1;
        let b = sample_categorical(&mut rng, &cumulative);
        let len = (1 + geometric.sample(&mut rng) as usize).min(frames - labels.len());
        let em = &lang.emissions()[b];
        for _ in 0..len {
            let mut row = features.row_mut(labels.len());
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                row[d] = em.mean[d] + em.stddev[d] * z;
            }
            labels.push(b as u32);
        }
    }
    FrameCorpus::new(lang.name().to_string(), features, labels, starts)
}

/// One part of a split corpus with the source utterance indices it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPart {
    pub corpus: FrameCorpus,
    pub utterances: Vec<usize>,
}

/// Splits at utterance level. Utterances are assigned to parts after a seeded
/// shuffle; inside a part they keep their original order.
pub fn split_corpus(corpus: &FrameCorpus, fractions: &[f64], seed: u64) -> Result<Vec<CorpusPart>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::InvalidArgument("split fractions must be positive".into()));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("split fractions must sum to 1".into()));
    }
    let n = corpus.utterance_count();
    if n < fractions.len() {
        return Err(Error::InvalidArgument(format!(
            "{n} utterances cannot fill {} splits",
            fractions.len()
        )));
    }

    // Largest-remainder apportionment, then make every part nonempty.
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = (0..counts.len()).max_by_key(|&i| (counts[i], usize::MAX - i)).unwrap();
        counts[donor] -= 1;
        counts[empty] += 1;
    }

    let mut utts: Vec<usize> = (0..n).collect();
    if fractions.len() > 1 {
        utts.shuffle(&mut rng_for(seed, &format!("split/{}", corpus.language())));
    }
    let mut parts = Vec::with_capacity(counts.len());
    let mut at = 0;
    for c in counts {
        let mut mine = utts[at..at + c].to_vec();
        mine.sort_unstable();
        at += c;
        parts.push(CorpusPart {
            corpus: corpus.select_utterances(&mine),
            utterances: mine,
        });
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::family::{make_language_family, FamilyConfig};

    fn lang() -> LanguageSpec {
        let cfg = FamilyConfig {
            languages: vec!["solo".into()],
            phoneme_counts: vec![8],
            overlaps: vec![vec![1.0]],
            dim: 3,
            biphones_per_language: 20,
            ..FamilyConfig::default()
        };
        make_language_family(&cfg).unwrap().remove(0)
    }

    fn toy_corpus(utterances: usize) -> FrameCorpus {
        let frames = utterances * 3;
        let features = Array2::from_shape_fn((frames, 2), |(i, j)| (i * 2 + j) as f64);
        let labels = (0..frames as u32).map(|i| i % 4).collect();
        let starts = (0..utterances).map(|u| u * 3).collect();
        FrameCorpus::new("toy".into(), features, labels, starts).unwrap()
    }

    #[test]
    fn exact_frame_count_and_valid_labels() {
        let l = lang();
        let c = sample_corpus(&l, 1000, 1).unwrap();
        assert_eq!(c.len(), 1000);
        c.validate_against(&l).unwrap();
        assert_eq!(c.utterance_starts()[0], 0);
        assert!(sample_corpus(&l, 0, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let l = lang();
        assert_eq!(sample_corpus(&l, 500, 9).unwrap(), sample_corpus(&l, 500, 9).unwrap());
        assert_ne!(sample_corpus(&l, 500, 9).unwrap(), sample_corpus(&l, 500, 10).unwrap());
    }

    #[test]
    fn split_counts() {
        let c = toy_corpus(100);
        let parts = split_corpus(&c, &[0.9, 0.05, 0.05], 3).unwrap();
        let sizes: Vec<usize> = parts.iter().map(|p| p.utterances.len()).collect();
        assert_eq!(sizes, vec![90, 5, 5]);
        let whole = split_corpus(&c, &[1.0], 3).unwrap();
        assert_eq!(whole[0].corpus, c);
    }

    #[test]
    fn split_is_a_partition_of_frames() {
        let c = toy_corpus(37);
        let parts = split_corpus(&c, &[0.5, 0.3, 0.2], 8).unwrap();
        // Features encode the frame index, so membership is recoverable.
        let mut seen = vec![0u8; c.len()];
        for p in &parts {
            for row in p.corpus.features().rows() {
                seen[(row[0] / 2.0) as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn split_errors() {
        let c = toy_corpus(2);
        assert!(split_corpus(&c, &[0.4, 0.3, 0.3], 1).is_err());
        assert!(split_corpus(&c, &[0.5, 0.6], 1).is_err());
        assert!(split_corpus(&c, &[1.0, 0.0], 1).is_err());
    }

    #[test]
    fn tiny_fraction_still_gets_an_utterance() {
        let c = toy_corpus(10);
        let parts = split_corpus(&c, &[0.98, 0.01, 0.01], 1).unwrap();
        assert!(parts.iter().all(|p| !p.utterances.is_empty()));
    }

    #[test]
    fn binary_layout() {
        let c = toy_corpus(2);
        let bytes = c.encode().unwrap();
        assert_eq!(&bytes[..4], b"PMFC");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 16 + 6 * 2 * 8 + 6 * 4 + 4 + 2 * 4);
        assert_eq!(FrameCorpus::decode("toy".into(), &bytes).unwrap(), c);
        assert!(FrameCorpus::decode("toy".into(), &bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn tampered_blob_detected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("c");
        let c = toy_corpus(3);
        c.save(&stem).unwrap();
        assert_eq!(FrameCorpus::load(&stem).unwrap(), c);
        let mut bytes = fs::read(stem.with_extension("pmfc")).unwrap();
        bytes[20] ^= 1;
        fs::write(stem.with_extension("pmfc"), bytes).unwrap();
        assert!(matches!(FrameCorpus::load(&stem), Err(Error::ChecksumMismatch { .. })));
    }
}
