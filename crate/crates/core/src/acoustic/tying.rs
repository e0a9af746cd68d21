//! Data-driven state tying by average-linkage clustering of biphone feature means.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::NO_CLASS;
use crate::synth::{Biphone, FrameCorpus, LanguageSpec, Phoneme};

pub const MANIFEST_VERSION: u32 = 1;

/// Biphones with at least this many training frames stay unmerged while any
/// other merge is possible.
pub const DEFAULT_MIN_SOLO_FRAMES: usize = 50;

/// Biphone → tied-class assignment of one acoustic model.
///
/// Class `k` is the cluster `clusters()[k]`; clusters are ordered by their
/// lowest member index and members are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct TiedStateInventory {
    language: String,
    covers: Vec<String>,
    biphones: Vec<Biphone>,
    clusters: Vec<Vec<usize>>,
    restricted: Vec<bool>,
    class_of: HashMap<Biphone, usize>,
}

impl TiedStateInventory {
    /// `covers` names the corpus languages whose labels can be translated into
    /// this tying; `biphones` is the inventory the cluster members index into.
    pub fn new(
        language: impl Into<String>,
        covers: Vec<String>,
        biphones: Vec<Biphone>,
        clusters: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let language = language.into();
        if clusters.is_empty() {
            return Err(Error::InvalidArgument(format!("tying {language} has no clusters")));
        }
        let mut class_of = HashMap::new();
        for (k, members) in clusters.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidArgument(format!("tying {language}: cluster {k} is empty")));
            }
            for &m in members {
                let b = biphones.get(m).ok_or_else(|| {
                    Error::InvalidArgument(format!("tying {language}: member {m} out of range"))
                })?;
                if class_of.insert(b.clone(), k).is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "tying {language}: biphone {b} is in two clusters"
                    )));
                }
            }
        }
        let restricted = clusters.iter().map(|c| c.len() == 1).collect();
        Ok(Self {
            language,
            covers,
            biphones,
            clusters,
            restricted,
            class_of,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn covers(&self, language: &str) -> bool {
        self.covers.iter().any(|c| c == language)
    }

    pub fn covered_languages(&self) -> &[String] {
        &self.covers
    }

    pub fn inventory(&self) -> &[Biphone] {
        &self.biphones
    }

    pub fn class_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn cluster_biphones(&self, class: usize) -> impl Iterator<Item = &Biphone> {
        self.clusters[class].iter().map(|&m| &self.biphones[m])
    }

    /// Whether class `class` is a singleton cluster.
    pub fn is_restricted(&self, class: usize) -> bool {
        self.restricted[class]
    }

    pub fn restricted_flags(&self) -> &[bool] {
        &self.restricted
    }

    pub fn class_of(&self, b: &Biphone) -> Option<usize> {
        self.class_of.get(b).copied()
    }

    /// Biphones attested in the tying data (members of some cluster).
    pub fn attested(&self) -> impl Iterator<Item = &Biphone> {
        self.clusters.iter().flatten().map(|&m| &self.biphones[m])
    }

    pub fn is_attested(&self, b: &Biphone) -> bool {
        self.class_of.contains_key(b)
    }

    /// Whether `b` sits alone in its cluster.
    pub fn is_restricted_biphone(&self, b: &Biphone) -> bool {
        self.class_of(b).is_some_and(|k| self.restricted[k])
    }

    /// Tied class per biphone of `lang`, [`NO_CLASS`] where the biphone is unattested.
    pub fn class_table(&self, lang: &LanguageSpec) -> Vec<u32> {
        lang.biphones()
            .iter()
            .map(|b| self.class_of(b).map_or(NO_CLASS, |k| k as u32))
            .collect()
    }

    /// Tied class of every frame of `corpus`, [`NO_CLASS`] for unattested biphones.
    pub fn translate_labels(&self, corpus: &FrameCorpus, lang: &LanguageSpec) -> Result<Vec<u32>> {
        if corpus.language() != lang.name() {
            return Err(Error::InvalidArgument(format!(
                "corpus of {} labeled against language {}",
                corpus.language(),
                lang.name()
            )));
        }
        let table = self.class_table(lang);
        corpus
            .labels()
            .iter()
            .map(|&l| {
                table
                    .get(l as usize)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("label {l} outside {}", lang.name())))
            })
            .collect()
    }

    pub fn to_manifest(&self) -> Result<String> {
        let m = TyingManifest {
            format_version: MANIFEST_VERSION,
            language: self.language.clone(),
            covers: self.covers.clone(),
            biphones: self
                .biphones
                .iter()
                .map(|b| [b.left.clone(), b.center.clone()])
                .collect(),
            clusters: self.clusters.clone(),
        };
        Ok(toml::to_string(&m)?)
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let m: TyingManifest = toml::from_str(text)?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::format(
                "tying manifest",
                format!("unsupported format_version {}", m.format_version),
            ));
        }
        let biphones = m
            .biphones
            .into_iter()
            .map(|[left, center]| Biphone { left, center })
            .collect();
        Self::new(m.language, m.covers, biphones, m.clusters)
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
struct TyingManifest {
    format_version: u32,
    language: String,
    covers: Vec<String>,
    biphones: Vec<[Phoneme; 2]>,
    clusters: Vec<Vec<usize>>,
}

/// Ties the biphones of `lang` attested in `corpus` into `target_class_count` classes.
pub fn tie_states(
    corpus: &FrameCorpus,
    lang: &LanguageSpec,
    target_class_count: usize,
    min_solo_frames: usize,
) -> Result<TiedStateInventory> {
    corpus.validate_against(lang)?;
    let labels: Vec<usize> = corpus.labels().iter().map(|&l| l as usize).collect();
    tie_frames(
        lang.name(),
        vec![lang.name().to_string()],
        lang.biphones().to_vec(),
        corpus.features(),
        &labels,
        target_class_count,
        min_solo_frames,
    )
}

/// Class count for a tying fraction: `round(fraction · attested)`, at least 1.
pub fn class_count_for(fraction: f64, attested: usize) -> usize {
    ((fraction * attested as f64).round() as usize).clamp(1, attested.max(1))
}

/// Ties over frames labeled with indices into `biphones`.
pub(crate) fn tie_frames(
    language: &str,
    covers: Vec<String>,
    biphones: Vec<Biphone>,
    features: ArrayView2<f64>,
    labels: &[usize],
    target_class_count: usize,
    min_solo_frames: usize,
) -> Result<TiedStateInventory> {
    if target_class_count < 1 {
        return Err(Error::InvalidArgument("target class count must be at least 1".into()));
    }
    let dim = features.ncols();
    let mut counts = vec![0usize; biphones.len()];
    let mut sums = vec![vec![0.0; dim]; biphones.len()];
    for (row, &l) in features.rows().into_iter().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums[l].iter_mut().zip(row.iter()) {
            *s += v;
        }
    }
    let attested: Vec<usize> = (0..biphones.len()).filter(|&b| counts[b] > 0).collect();
    if attested.is_empty() {
        return Err(Error::Empty("tying corpus"));
    }
    if target_class_count > attested.len() {
        return Err(Error::InvalidArgument(format!(
            "target class count {target_class_count} exceeds {} attested biphones",
            attested.len()
        )));
    }
    let means: Vec<Vec<f64>> = attested
        .iter()
        .map(|&b| sums[b].iter().map(|s| s / counts[b] as f64).collect())
        .collect();
    let exempt: Vec<bool> = attested.iter().map(|&b| counts[b] >= min_solo_frames).collect();
    let groups = average_linkage(&means, &exempt, target_class_count);
    let clusters = groups
        .into_iter()
        .map(|g| g.into_iter().map(|i| attested[i]).collect())
        .collect();
    TiedStateInventory::new(language, covers, biphones, clusters)
}

/// Agglomerative average-linkage clustering down to `target` groups.
///
/// Merges between two non-exempt groups are preferred; exempt points join only
/// once fewer than two non-exempt groups remain. Ties go to the lowest
/// `(i, j)` pair, and groups are returned ordered by their lowest member.
fn average_linkage(points: &[Vec<f64>], exempt: &[bool], target: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active = vec![true; n];
    let mut exempt = exempt.to_vec();
    let mut remaining = n;

    while remaining > target {
        let mut best_free: Option<(f64, usize, usize)> = None;
        let mut best_any: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                let d = dist[i * n + j];
                if best_any.is_none_or(|(b, _, _)| d < b) {
                    best_any = Some((d, i, j));
                }
                if !exempt[i] && !exempt[j] && best_free.is_none_or(|(b, _, _)| d < b) {
                    best_free = Some((d, i, j));
                }
            }
        }
        let (_, i, j) = best_free.or(best_any).expect("at least two active groups");
        let (ni, nj) = (members[i].len() as f64, members[j].len() as f64);
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let d = (ni * dist[i * n + k] + nj * dist[j * n + k]) / (ni + nj);
            dist[i * n + k] = d;
            dist[k * n + i] = d;
        }
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        members[i].sort_unstable();
        exempt[i] = exempt[i] && exempt[j];
        active[j] = false;
        remaining -= 1;
    }
    members.into_iter().filter(|m| !m.is_empty()).collect()
}
