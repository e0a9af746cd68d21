//! Biphone subset partition, per-subset KL statistics and similarity tables.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::acoustic::TiedStateInventory;
use crate::error::{Error, Result};
use crate::math::prob::{entropy_slice, kl_slice};
use crate::stream::PosteriorStream;
use crate::synth::{Biphone, LanguageSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubsetTag {
    /// Both phonemes shared and the biphone seen in source training data.
    SS,
    /// Both phonemes shared, biphone never seen by the source.
    SU,
    /// At least one phoneme missing from the source inventory.
    U,
}

impl fmt::Display for SubsetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubsetTag::SS => "SS",
            SubsetTag::SU => "SU",
            SubsetTag::U => "U",
        })
    }
}

/// Rows of a [`SimilarityReport`], in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subset {
    SS,
    SU,
    U,
    RSS,
    RSU,
    RU,
}

impl Subset {
    pub const ALL: [Subset; 6] = [Subset::SS, Subset::SU, Subset::U, Subset::RSS, Subset::RSU, Subset::RU];

    pub fn name(self) -> &'static str {
        match self {
            Subset::SS => "SS",
            Subset::SU => "SU",
            Subset::U => "U",
            Subset::RSS => "RSS",
            Subset::RSU => "RSU",
            Subset::RU => "RU",
        }
    }

    fn contains(self, tag: SubsetTag, restricted: bool) -> bool {
        match self {
            Subset::SS => tag == SubsetTag::SS,
            Subset::SU => tag == SubsetTag::SU,
            Subset::U => tag == SubsetTag::U,
            Subset::RSS => restricted && tag == SubsetTag::SS,
            Subset::RSU => restricted && tag == SubsetTag::SU,
            Subset::RU => restricted && tag == SubsetTag::U,
        }
    }

    fn has_samc(self) -> bool {
        matches!(self, Subset::SS | Subset::RSS)
    }
}

/// Subset tag and restricted flag of every target biphone relative to one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiphoneSubsetPartition {
    pub target: String,
    pub source: String,
    pub biphones: Vec<Biphone>,
    pub tags: Vec<SubsetTag>,
    pub restricted: Vec<bool>,
}

impl BiphoneSubsetPartition {
    pub fn count(&self, subset: Subset) -> usize {
        self.tags
            .iter()
            .zip(&self.restricted)
            .filter(|(&t, &r)| subset.contains(t, r))
            .count()
    }

    pub fn members(&self, subset: Subset) -> Vec<usize> {
        (0..self.tags.len())
            .filter(|&i| subset.contains(self.tags[i], self.restricted[i]))
            .collect()
    }
}

/// Tags each biphone of `target_lang` against `source_lang`: `U` when a phoneme
/// is missing from the source, `SS` when the source attested it in training,
/// `SU` otherwise. Restricted flags mark singleton clusters of `target_tying`.
pub fn partition_biphones<'a>(
    target_lang: &LanguageSpec,
    source_lang: &LanguageSpec,
    source_train_attested: impl IntoIterator<Item = &'a Biphone>,
    target_tying: &TiedStateInventory,
) -> BiphoneSubsetPartition {
    let attested: HashSet<&Biphone> = source_train_attested.into_iter().collect();
    let mut tags = Vec::with_capacity(target_lang.biphones().len());
    let mut restricted = Vec::with_capacity(target_lang.biphones().len());
    for b in target_lang.biphones() {
        let tag = if !source_lang.has_phoneme(&b.left) || !source_lang.has_phoneme(&b.center) {
            SubsetTag::U
        } else if attested.contains(b) {
            SubsetTag::SS
        } else {
            SubsetTag::SU
        };
        tags.push(tag);
        restricted.push(target_tying.is_restricted_biphone(b));
    }
    BiphoneSubsetPartition {
        target: target_lang.name().to_string(),
        source: source_lang.name().to_string(),
        biphones: target_lang.biphones().to_vec(),
        tags,
        restricted,
    }
}

/// Source tied class of each SS target biphone (`None` elsewhere).
pub fn cross_class_map(partition: &BiphoneSubsetPartition, source_tying: &TiedStateInventory) -> Vec<Option<usize>> {
    partition
        .biphones
        .iter()
        .zip(&partition.tags)
        .map(|(b, &t)| if t == SubsetTag::SS { source_tying.class_of(b) } else { None })
        .collect()
}

/// Per frame: whether the source model's argmax hits the source class of the
/// frame's true biphone. `None` for frames whose biphone is not SS.
pub fn samc_correct(
    source_stream: &PosteriorStream,
    partition: &BiphoneSubsetPartition,
    alignment: &[u32],
    cross_class_map: &[Option<usize>],
) -> Result<Vec<Option<bool>>> {
    Error::check_dim("alignment length", source_stream.len(), alignment.len())?;
    Error::check_dim("cross-class map", partition.biphones.len(), cross_class_map.len())?;
    let pred = source_stream.argmax();
    alignment
        .iter()
        .zip(pred)
        .map(|(&b, p)| {
            let b = b as usize;
            let tag = *partition
                .tags
                .get(b)
                .ok_or_else(|| Error::InvalidArgument(format!("alignment label {b} outside target inventory")))?;
            Ok(match (tag, cross_class_map[b]) {
                (SubsetTag::SS, Some(k)) => Some(p == k),
                _ => None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub subset: Subset,
    pub biphones: usize,
    pub frames: usize,
    pub mean_kl: Option<f64>,
    /// Mean KL over frames the source model classified correctly (SS/RSS only).
    pub mean_kl_samc: Option<f64>,
    /// Percentage of frames the source model classified correctly (SS/RSS only).
    pub samc_correct_pct: Option<f64>,
    /// Mean entropy of the mapped posteriors.
    pub mean_entropy: Option<f64>,
    pub mean_entropy_samc: Option<f64>,
}

impl SubsetRow {
    pub fn subset_name(&self) -> &'static str {
        self.subset.name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub source: String,
    pub target: String,
    pub frames: usize,
    pub rows: Vec<SubsetRow>,
    /// Mean per-frame KL(target ‖ mapped) over all frames.
    pub d_x: f64,
}

impl SimilarityReport {
    pub fn row(&self, subset: Subset) -> &SubsetRow {
        self.rows.iter().find(|r| r.subset == subset).expect("every subset has a row")
    }
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Per-subset statistics of `mapped` against `target` on the target test frames.
///
/// `alignment` holds the true target biphone of every frame; `samc` is the
/// output of [`samc_correct`] for the same frames.
pub fn subset_report(
    target_stream: &PosteriorStream,
    mapped_stream: &PosteriorStream,
    partition: &BiphoneSubsetPartition,
    alignment: &[u32],
    samc: &[Option<bool>],
) -> Result<SimilarityReport> {
    if target_stream.is_empty() {
        return Err(Error::Empty("similarity test stream"));
    }
    target_stream.check_aligned(mapped_stream)?;
    Error::check_dim("mapped stream classes", target_stream.classes(), mapped_stream.classes())?;
    Error::check_dim("alignment length", target_stream.len(), alignment.len())?;
    Error::check_dim("SAMC flags", target_stream.len(), samc.len())?;

    #[derive(Default, Clone, Copy)]
    struct Acc {
        n: usize,
        kl: f64,
        ent: f64,
        n_ok: usize,
        kl_ok: f64,
        ent_ok: f64,
        n_samc: usize,
    }
    let mut acc = [Acc::default(); 6];
    let mut total_kl = 0.0;
    for t in 0..target_stream.len() {
        let b = alignment[t] as usize;
        let tag = *partition
            .tags
            .get(b)
            .ok_or_else(|| Error::InvalidArgument(format!("alignment label {b} outside target inventory")))?;
        let restricted = partition.restricted[b];
        let kl = kl_slice(target_stream.frame_slice(t), mapped_stream.frame_slice(t));
        let ent = entropy_slice(mapped_stream.frame_slice(t));
        total_kl += kl;
        for (s, a) in Subset::ALL.iter().zip(acc.iter_mut()) {
            if !s.contains(tag, restricted) {
                continue;
            }
            a.n += 1;
            a.kl += kl;
            a.ent += ent;
            if let Some(ok) = samc[t] {
                a.n_samc += 1;
                if ok {
                    a.n_ok += 1;
                    a.kl_ok += kl;
                    a.ent_ok += ent;
                }
            }
        }
    }
    let rows = Subset::ALL
        .iter()
        .zip(acc)
        .map(|(&s, a)| SubsetRow {
            subset: s,
            biphones: partition.count(s),
            frames: a.n,
            mean_kl: mean(a.kl, a.n),
            mean_kl_samc: if s.has_samc() { mean(a.kl_ok, a.n_ok) } else { None },
            samc_correct_pct: if s.has_samc() { mean(100.0 * a.n_ok as f64, a.n_samc) } else { None },
            mean_entropy: mean(a.ent, a.n),
            mean_entropy_samc: if s.has_samc() { mean(a.ent_ok, a.n_ok) } else { None },
        })
        .collect();
    Ok(SimilarityReport {
        source: partition.source.clone(),
        target: partition.target.clone(),
        frames: target_stream.len(),
        rows,
        d_x: total_kl / target_stream.len() as f64,
    })
}

/// `D_X` per ordered language pair; rows are targets, columns sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub languages: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn get(&self, target: &str, source: &str) -> Option<f64> {
        let i = self.languages.iter().position(|l| l == target)?;
        let j = self.languages.iter().position(|l| l == source)?;
        Some(self.values[i][j])
    }
}

/// Assembles `D_X` of every ordered pair; the diagonal is 0.
pub fn similarity_matrix(languages: &[String], reports: &[SimilarityReport]) -> Result<SimilarityMatrix> {
    let n = languages.len();
    let mut values = vec![vec![0.0; n]; n];
    let mut missing = Vec::new();
    for (i, target) in languages.iter().enumerate() {
        for (j, source) in languages.iter().enumerate() {
            if i == j {
                continue;
            }
            match reports.iter().find(|r| &r.target == target && &r.source == source) {
                Some(r) => values[i][j] = r.d_x,
                None => missing.push(format!("{source}->{target}")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "similarity matrix is missing pairs: {}",
            missing.join(", ")
        )));
    }
    Ok(SimilarityMatrix {
        languages: languages.to_vec(),
        values,
    })
}

/// Cross-lingual phoneme shares: cell `(i, j)` is `|P_i ∩ P_j| / |P_j| · 100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapTable {
    pub languages: Vec<String>,
    pub shared: Vec<Vec<usize>>,
    pub percent: Vec<Vec<f64>>,
}

pub fn overlap_table(langs: &[LanguageSpec]) -> Result<OverlapTable> {
    if langs.len() < 2 {
        return Err(Error::InvalidArgument("overlap table needs at least two languages".into()));
    }
    let sets: Vec<HashSet<_>> = langs.iter().map(|l| l.phonemes().iter().collect()).collect();
    let n = langs.len();
    let mut shared = vec![vec![0; n]; n];
    let mut percent = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let c = sets[i].intersection(&sets[j]).count();
            shared[i][j] = c;
            percent[i][j] = 100.0 * c as f64 / sets[j].len() as f64;
        }
    }
    Ok(OverlapTable {
        languages: langs.iter().map(|l| l.name().to_string()).collect(),
        shared,
        percent,
    })
}
