//! Families of synthetic languages with controlled phoneme overlap and acoustic drift.
//!
//! Every phoneme of the family pool has a base emission mean. A language sees
//! each of its phonemes at the base mean plus Gaussian drift of scale `ε`
//! (its own drift value), so shared phonemes are acoustically identical across
//! languages exactly when all drifts are zero. Biphone selection drifts with the
//! same `ε`: family-level scores keyed by the biphone's symbols are mixed with
//! per-language scores weighted by `ε`. Biphone frequencies are drawn per
//! language from a flat Dirichlet.

use std::collections::BTreeSet;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::lang::{Biphone, Emission, LanguageSpec, Phoneme};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

/// Weight of the center phoneme in a biphone's emission mean (left gets the rest).
pub const CENTER_WEIGHT: f64 = 0.7;
pub const LEFT_WEIGHT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub languages: Vec<String>,
    /// Phoneme inventory size of each language.
    pub phoneme_counts: Vec<usize>,
    /// Symmetric matrix of requested overlap fractions; the requested shared
    /// count of a pair is `round(fraction · min(|P_i|, |P_j|))`. Diagonal ignored.
    pub overlaps: Vec<Vec<f64>>,
    /// Acoustic drift `ε` of every language.
    pub drift: f64,
    /// Per-language drift overriding `drift`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_drift: Option<Vec<f64>>,
    pub dim: usize,
    pub biphones_per_language: usize,
    /// Standard deviation of base phoneme means per dimension.
    pub mean_scale: f64,
    /// Standard deviation of the per-biphone offset added to the composed mean.
    pub biphone_jitter: f64,
    /// Typical emission standard deviation per dimension.
    pub emission_stddev: f64,
    pub mean_segment_frames: usize,
    pub seed: u64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self::standard(0.5, 20240611)
    }
}

impl FamilyConfig {
    /// Three 30-phoneme languages with pairwise overlaps 0.70 / 0.85 / 0.70.
    pub fn standard(drift: f64, seed: u64) -> Self {
        Self {
            languages: vec!["la".into(), "lb".into(), "lc".into()],
            phoneme_counts: vec![30, 30, 30],
            overlaps: vec![
                vec![1.0, 0.70, 0.70],
                vec![0.70, 1.0, 0.85],
                vec![0.70, 0.85, 1.0],
            ],
            drift,
            language_drift: None,
            dim: 24,
            biphones_per_language: 300,
            mean_scale: 1.0,
            biphone_jitter: 0.35,
            emission_stddev: 0.6,
            mean_segment_frames: 5,
            seed,
        }
    }

    pub fn drift_of(&self, lang: usize) -> f64 {
        self.language_drift
            .as_ref()
            .map(|d| d[lang])
            .unwrap_or(self.drift)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.languages.len();
        let bad = |m: String| Err(Error::Unsatisfiable(m));
        if n == 0 {
            return bad("no languages".into());
        }
        if self.phoneme_counts.len() != n {
            return bad(format!("{} phoneme counts for {n} languages", self.phoneme_counts.len()));
        }
        let names: BTreeSet<&String> = self.languages.iter().collect();
        if names.len() != n {
            return bad("language names must be unique".into());
        }
        if self.overlaps.len() != n || self.overlaps.iter().any(|r| r.len() != n) {
            return bad(format!("overlap matrix must be {n}×{n}"));
        }
        for i in 0..n {
            for j in 0..n {
                let f = self.overlaps[i][j];
                if i != j && !(0.0..=1.0).contains(&f) {
                    return bad(format!(
                        "overlap {f} between {} and {} outside [0, 1]",
                        self.languages[i], self.languages[j]
                    ));
                }
                if (f - self.overlaps[j][i]).abs() > 1e-12 {
                    return bad("overlap matrix must be symmetric".into());
                }
            }
        }
        if let Some(d) = &self.language_drift {
            if d.len() != n {
                return bad(format!("{} drift values for {n} languages", d.len()));
            }
        }
        for i in 0..n {
            let e = self.drift_of(i);
            if !(e >= 0.0 && e.is_finite()) {
                return bad(format!("drift {e} must be non-negative"));
            }
            let p = self.phoneme_counts[i];
            if p == 0 {
                return bad(format!("language {} has no phonemes", self.languages[i]));
            }
            if self.biphones_per_language > p * p {
                return bad(format!(
                    "{} biphones requested but only {} pairs exist over {p} phonemes",
                    self.biphones_per_language,
                    p * p
                ));
            }
        }
        if self.dim == 0 || self.biphones_per_language == 0 || self.mean_segment_frames == 0 {
            return bad("dim, biphones_per_language and mean_segment_frames must be positive".into());
        }
        if !(self.emission_stddev > 0.0) || self.mean_scale < 0.0 || self.biphone_jitter < 0.0 {
            return bad("emission_stddev must be positive, scales non-negative".into());
        }
        Ok(())
    }

    /// Requested shared-phoneme count of every pair.
    pub fn requested_shared(&self) -> Vec<Vec<usize>> {
        let n = self.languages.len();
        let mut out = vec![vec![0; n]; n];
        for i in 0..n {
            for j in 0..n {
                out[i][j] = if i == j {
                    self.phoneme_counts[i]
                } else {
                    let m = self.phoneme_counts[i].min(self.phoneme_counts[j]);
                    (self.overlaps[i][j] * m as f64).round() as usize
                };
            }
        }
        out
    }
}

/// Assigns pool phonemes to languages so that every pair shares its requested count.
///
/// Greedy clique construction: take the pair with the largest outstanding
/// need, extend it with every language that still needs phonemes shared with
/// all current members, and add one phoneme to that whole group. Repeat until
/// no pair needs more, then fill each inventory with private phonemes.
fn assign_memberships(cfg: &FamilyConfig) -> Result<Vec<Vec<usize>>> {
    let n = cfg.languages.len();
    let mut need = cfg.requested_shared();
    let mut room: Vec<usize> = cfg.phoneme_counts.clone();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    loop {
        let mut seed_pair = None;
        let mut best = 0;
        for i in 0..n {
            for j in i + 1..n {
                if need[i][j] > best {
                    best = need[i][j];
                    seed_pair = Some((i, j));
                }
            }
        }
        let Some((i, j)) = seed_pair else { break };
        let mut group = vec![i, j];
        for k in 0..n {
            if group.contains(&k) || room[k] == 0 {
                continue;
            }
            if group.iter().all(|&m| need[m][k] > 0) {
                group.push(k);
            }
        }
        for &m in &group {
            if room[m] == 0 {
                return Err(Error::Unsatisfiable(format!(
                    "language {} cannot hold all requested shared phonemes",
                    cfg.languages[m]
                )));
            }
            room[m] -= 1;
        }
        for a in 0..group.len() {
            for b in a + 1..group.len() {
                let (x, y) = (group[a], group[b]);
                need[x][y] = need[x][y].saturating_sub(1);
                need[y][x] = need[y][x].saturating_sub(1);
            }
        }
        group.sort_unstable();
        groups.push(group);
    }
    for (lang, r) in room.into_iter().enumerate() {
        for _ in 0..r {
            groups.push(vec![lang]);
        }
    }
    Ok(groups)
}

fn normal_vec(rng: &mut Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Family-level stream keyed by a biphone's symbols, independent of which
/// languages contain it or in what order they are generated.
fn pair_rng(seed: u64, purpose: &str, left: &str, center: &str) -> Rng {
    rng_for(seed, &format!("{purpose}/{left}/{center}"))
}

/// Generates every language of the family.
pub fn make_language_family(cfg: &FamilyConfig) -> Result<Vec<LanguageSpec>> {
    cfg.validate()?;
    let groups = assign_memberships(cfg)?;
    let n = cfg.languages.len();

    let width = groups.len().to_string().len().max(2);
    let symbols: Vec<String> = (0..groups.len()).map(|i| format!("p{i:0width$}")).collect();
    let mut base_rng = rng_for(cfg.seed, "phoneme-means");
    let base_means: Vec<Vec<f64>> = (0..groups.len())
        .map(|_| normal_vec(&mut base_rng, cfg.dim, cfg.mean_scale))
        .collect();

    let mut languages = Vec::with_capacity(n);
    for (li, name) in cfg.languages.iter().enumerate() {
        let drift = cfg.drift_of(li);
        let members: Vec<usize> = (0..groups.len()).filter(|&p| groups[p].contains(&li)).collect();

        let mut drift_rng = rng_for(cfg.seed, &format!("drift/{name}"));
        let means: Vec<Vec<f64>> = members
            .iter()
            .map(|&p| {
                let noise = normal_vec(&mut drift_rng, cfg.dim, 1.0);
                if drift == 0.0 {
                    base_means[p].clone()
                } else {
                    base_means[p].iter().zip(&noise).map(|(b, z)| b + drift * z).collect()
                }
            })
            .collect();

        // Biphone selection: lowest scores g(pair) + ε·h(language, pair).
        let mut lang_rng = rng_for(cfg.seed, &format!("phonotactics/{name}"));
        let mut scored = Vec::with_capacity(members.len() * members.len());
        for (a, &l) in members.iter().enumerate() {
            for (b, &c) in members.iter().enumerate() {
                let g: f64 = StandardNormal.sample(&mut pair_rng(cfg.seed, "select", &symbols[l], &symbols[c]));
                let h: f64 = StandardNormal.sample(&mut lang_rng);
                scored.push((g + drift * h, a, b));
            }
        }
        scored.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut chosen: Vec<(usize, usize)> = scored[..cfg.biphones_per_language]
            .iter()
            .map(|&(_, a, b)| (a, b))
            .collect();
        chosen.sort_unstable_by_key(|&(a, b)| (b, a));

        let mut biphones = Vec::with_capacity(chosen.len());
        let mut emissions = Vec::with_capacity(chosen.len());
        let mut weights = Vec::with_capacity(chosen.len());
        let mut freq_rng = rng_for(cfg.seed, &format!("frequency/{name}"));
        for &(a, b) in &chosen {
            let (l, c) = (members[a], members[b]);
            let mut prng = pair_rng(cfg.seed, "emission", &symbols[l], &symbols[c]);
            let jitter = normal_vec(&mut prng, cfg.dim, cfg.biphone_jitter);
            let mean: Vec<f64> = (0..cfg.dim)
                .map(|d| CENTER_WEIGHT * means[b][d] + LEFT_WEIGHT * means[a][d] + jitter[d])
                .collect();
            let stddev: Vec<f64> = (0..cfg.dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut prng);
                    cfg.emission_stddev * (0.1 * z).exp()
                })
                .collect();
            let w: f64 = Exp1.sample(&mut freq_rng);
            weights.push(w);
            biphones.push(Biphone::new(symbols[l].as_str(), symbols[c].as_str()));
            emissions.push(Emission { mean, stddev });
        }
        let total: f64 = weights.iter().sum();
        let frequencies = weights.into_iter().map(|w| w / total).collect();

        let phonemes = members.iter().map(|&p| Phoneme::new(symbols[p].as_str())).collect();
        languages.push(LanguageSpec::new(
            name.clone(),
            cfg.dim,
            phonemes,
            biphones,
            emissions,
            frequencies,
            cfg.mean_segment_frames,
        )?);
    }
    Ok(languages)
}

/// Draws an index from a cumulative weight table.
pub(crate) fn sample_categorical(rng: &mut Rng, cumulative: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * cumulative.last().copied().unwrap_or(1.0);
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(overlap: f64, drift: f64) -> FamilyConfig {
        FamilyConfig {
            languages: vec!["x".into(), "y".into()],
            phoneme_counts: vec![12, 12],
            overlaps: vec![vec![1.0, overlap], vec![overlap, 1.0]],
            drift,
            language_drift: None,
            dim: 4,
            biphones_per_language: 60,
            mean_segment_frames: 3,
            seed: 5,
            ..FamilyConfig::default()
        }
    }

    #[test]
    fn full_overlap_without_drift_is_identical() {
        let fam = make_language_family(&two(1.0, 0.0)).unwrap();
        assert_eq!(fam[0].phonemes(), fam[1].phonemes());
        assert_eq!(fam[0].biphones(), fam[1].biphones());
        assert_eq!(fam[0].emissions(), fam[1].emissions());
    }

    #[test]
    fn zero_overlap_is_disjoint() {
        let fam = make_language_family(&two(0.0, 0.5)).unwrap();
        let a: BTreeSet<_> = fam[0].phonemes().iter().collect();
        assert!(fam[1].phonemes().iter().all(|p| !a.contains(p)));
    }

    #[test]
    fn standard_overlaps_realized() {
        let cfg = FamilyConfig::standard(0.5, 3);
        let fam = make_language_family(&cfg).unwrap();
        let want = cfg.requested_shared();
        for i in 0..3 {
            assert_eq!(fam[i].phonemes().len(), 30);
            assert_eq!(fam[i].biphones().len(), 300);
            for j in 0..3 {
                let a: BTreeSet<_> = fam[i].phonemes().iter().collect();
                let shared = fam[j].phonemes().iter().filter(|p| a.contains(p)).count();
                assert!(shared.abs_diff(want[i][j]) <= 1, "{i},{j}: {shared} vs {}", want[i][j]);
            }
        }
    }

    #[test]
    fn drift_moves_shared_biphones() {
        let fam = make_language_family(&two(1.0, 0.5)).unwrap();
        let b0 = &fam[0].biphones()[0];
        if let Some(j) = fam[1].biphone_index(b0) {
            assert_ne!(fam[0].emissions()[0].mean, fam[1].emissions()[j].mean);
        }
        assert_ne!(fam[0].biphones(), fam[1].biphones());
    }

    #[test]
    fn unsatisfiable_requests() {
        let mut cfg = two(1.5, 0.0);
        assert!(matches!(make_language_family(&cfg), Err(Error::Unsatisfiable(_))));
        cfg = two(0.5, 0.0);
        cfg.overlaps[0][1] = 0.2;
        assert!(make_language_family(&cfg).is_err());
        cfg = two(0.5, 0.0);
        cfg.biphones_per_language = 1000;
        assert!(make_language_family(&cfg).is_err());
        // three languages that must each share all 4 phonemes pairwise but only in pairs
        let cfg = FamilyConfig {
            languages: vec!["a".into(), "b".into(), "c".into()],
            phoneme_counts: vec![4, 4, 4],
            overlaps: vec![vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]],
            biphones_per_language: 4,
            ..two(0.0, 0.0)
        };
        assert!(matches!(make_language_family(&cfg), Err(Error::Unsatisfiable(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = FamilyConfig::standard(0.5, 11);
        assert_eq!(make_language_family(&cfg).unwrap(), make_language_family(&cfg).unwrap());
    }
}
