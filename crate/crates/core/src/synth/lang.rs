use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// A phoneme symbol. Equal symbols in different languages denote a shared phoneme.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Phoneme(String);

impl Phoneme {
    pub fn new(symbol: impl Into<String>) -> Self {
        let s = symbol.into();
        assert!(!s.is_empty(), "phoneme symbol must be nonempty");
        Self(s)
    }

    pub fn symbol(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Phoneme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Left biphone: a center phoneme in the context of its left neighbour.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Biphone {
    pub left: Phoneme,
    pub center: Phoneme,
}

impl Biphone {
    pub fn new(left: &str, center: &str) -> Self {
        Self {
            left: Phoneme::new(left),
            center: Phoneme::new(center),
        }
    }
}

impl fmt::Display for Biphone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.left, self.center)
    }
}

/// Diagonal Gaussian emission of one biphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSpec {
    name: String,
    dim: usize,
    phonemes: Vec<Phoneme>,
    biphones: Vec<Biphone>,
    emissions: Vec<Emission>,
    frequencies: Vec<f64>,
    mean_segment_frames: usize,
    index: HashMap<Biphone, usize>,
}

impl LanguageSpec {
    pub fn new(
        name: String,
        dim: usize,
        phonemes: Vec<Phoneme>,
        biphones: Vec<Biphone>,
        emissions: Vec<Emission>,
        frequencies: Vec<f64>,
        mean_segment_frames: usize,
    ) -> Result<Self> {
        let invalid = |m: String| Err(Error::InvalidArgument(format!("language {name}: {m}")));
        let set: BTreeSet<&Phoneme> = phonemes.iter().collect();
        if set.len() != phonemes.len() {
            return invalid("duplicate phoneme".into());
        }
        if biphones.is_empty() {
            return invalid("no biphones".into());
        }
        if emissions.len() != biphones.len() || frequencies.len() != biphones.len() {
            return invalid("biphone, emission and frequency counts differ".into());
        }
        let mut index = HashMap::with_capacity(biphones.len());
        for (i, b) in biphones.iter().enumerate() {
            if !set.contains(&b.left) || !set.contains(&b.center) {
                return invalid(format!("biphone {b} uses a phoneme outside the inventory"));
            }
            if index.insert(b.clone(), i).is_some() {
                return invalid(format!("duplicate biphone {b}"));
            }
        }
        for (b, e) in biphones.iter().zip(&emissions) {
            if e.mean.len() != dim || e.stddev.len() != dim {
                return invalid(format!("emission of {b} does not have dimension {dim}"));
            }
            if e.stddev.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return invalid(format!("emission of {b} has a non-positive stddev"));
            }
        }
        if frequencies.iter().any(|&f| !(f >= 0.0)) || (frequencies.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("biphone frequencies must form a distribution".into());
        }
        if mean_segment_frames == 0 {
            return invalid("mean_segment_frames must be positive".into());
        }
        Ok(Self {
            name,
            dim,
            phonemes,
            biphones,
            emissions,
            frequencies,
            mean_segment_frames,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phonemes(&self) -> &[Phoneme] {
        &self.phonemes
    }

    pub fn has_phoneme(&self, p: &Phoneme) -> bool {
        self.phonemes.contains(p)
    }

    pub fn biphones(&self) -> &[Biphone] {
        &self.biphones
    }

    pub fn biphone_index(&self, b: &Biphone) -> Option<usize> {
        self.index.get(b).copied()
    }

    pub fn emissions(&self) -> &[Emission] {
        &self.emissions
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn mean_segment_frames(&self) -> usize {
        self.mean_segment_frames
    }

    pub fn to_manifest(&self) -> Result<String> {
        let m = LanguageManifest {
            format_version: MANIFEST_VERSION,
            name: self.name.clone(),
            dim: self.dim,
            mean_segment_frames: self.mean_segment_frames,
            phonemes: self.phonemes.clone(),
            biphones: self
                .biphones
                .iter()
                .zip(&self.emissions)
                .zip(&self.frequencies)
                .map(|((b, e), &f)| BiphoneEntry {
                    left: b.left.clone(),
                    center: b.center.clone(),
                    frequency: f,
                    mean: e.mean.clone(),
                    stddev: e.stddev.clone(),
                })
                .collect(),
        };
        Ok(toml::to_string(&m)?)
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let m: LanguageManifest = toml::from_str(text)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::format(
                "language manifest",
                format!("unsupported format_version {}", m.format_version),
            ));
        }
        let mut biphones = Vec::with_capacity(m.biphones.len());
        let mut emissions = Vec::with_capacity(m.biphones.len());
        let mut frequencies = Vec::with_capacity(m.biphones.len());
        for e in m.biphones {
            biphones.push(Biphone {
                left: e.left,
                center: e.center,
            });
            emissions.push(Emission {
                mean: e.mean,
                stddev: e.stddev,
            });
            frequencies.push(e.frequency);
        }
        Self::new(m.name, m.dim, m.phonemes, biphones, emissions, frequencies, m.mean_segment_frames)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_manifest()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_manifest(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct LanguageManifest {
    format_version: u32,
    name: String,
    dim: usize,
    mean_segment_frames: usize,
    phonemes: Vec<Phoneme>,
    biphones: Vec<BiphoneEntry>,
}

#[derive(Serialize, Deserialize)]
struct BiphoneEntry {
    left: Phoneme,
    center: Phoneme,
    frequency: f64,
    mean: Vec<f64>,
    stddev: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LanguageSpec {
        LanguageSpec::new(
            "toy".into(),
            2,
            vec![Phoneme::new("a"), Phoneme::new("b")],
            vec![Biphone::new("a", "b"), Biphone::new("b", "b")],
            vec![
                Emission { mean: vec![0.1, 1.0 / 3.0], stddev: vec![1.0, 2.0] },
                Emission { mean: vec![-5.0, 1e-300], stddev: vec![0.5, 0.7] },
            ],
            vec![0.25, 0.75],
            4,
        )
        .unwrap()
    }

    #[test]
    fn manifest_round_trip_is_exact() {
        let lang = toy();
        let text = lang.to_manifest().unwrap();
        assert!(text.contains("format_version = 1"));
        assert_eq!(LanguageSpec::from_manifest(&text).unwrap(), lang);
    }

    #[test]
    fn validation() {
        let l = toy();
        let bad_biphone = LanguageSpec::new(
            "bad".into(),
            2,
            l.phonemes().to_vec(),
            vec![Biphone::new("a", "z"), Biphone::new("b", "b")],
            l.emissions().to_vec(),
            l.frequencies().to_vec(),
            4,
        );
        assert!(bad_biphone.is_err());
        let bad_freq = LanguageSpec::new(
            "bad".into(),
            2,
            l.phonemes().to_vec(),
            l.biphones().to_vec(),
            l.emissions().to_vec(),
            vec![0.5, 0.6],
            4,
        );
        assert!(bad_freq.is_err());
        let mut em = l.emissions().to_vec();
        em[0].stddev[0] = 0.0;
        let bad_std = LanguageSpec::new(
            "bad".into(),
            2,
            l.phonemes().to_vec(),
            l.biphones().to_vec(),
            em,
            l.frequencies().to_vec(),
            4,
        );
        assert!(bad_std.is_err());
    }
}
