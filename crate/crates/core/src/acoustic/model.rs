//! Frame classifiers over tied states, their posterior streams, and the pooled baseline.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tying::{class_count_for, tie_frames, TiedStateInventory, DEFAULT_MIN_SOLO_FRAMES};
use crate::error::{Error, Result};
use crate::math::checkpoint::encode_params;
use crate::math::network::forward_chunked;
use crate::math::{load_checkpoint, save_checkpoint, train, Activation, NetworkParams, Samples, Targets};
use crate::math::{TrainConfig, TrainHistory};
use crate::stream::{LabelSpace, PosteriorStream, NO_CLASS};
use crate::synth::{Biphone, FrameCorpus, LanguageSpec, Phoneme};

/// Name given to the model trained on all languages together.
pub const POOLED_NAME: &str = "pooled";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    /// Tied classes as a fraction of attested biphones.
    pub tying_fraction: f64,
    pub min_solo_frames: usize,
    pub train: TrainConfig,
}

impl Default for AmConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![128],
            activation: Activation::Tanh,
            tying_fraction: 0.6,
            min_solo_frames: DEFAULT_MIN_SOLO_FRAMES,
            train: TrainConfig {
                max_epochs: 10,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub config: TrainConfig,
    /// sha256 over the fingerprints of the training and validation corpora.
    pub data_fingerprint: String,
    pub train_frames: usize,
    /// Tied-class frame error on the validation corpus.
    pub val_frame_error: f64,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    name: String,
    tying: TiedStateInventory,
    net: NetworkParams<f64>,
    meta: ModelMeta,
}

impl AcousticModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tying(&self) -> &TiedStateInventory {
        &self.tying
    }

    pub fn net(&self) -> &NetworkParams<f64> {
        &self.net
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn class_count(&self) -> usize {
        self.tying.class_count()
    }

    /// Writes `<stem>.toml`, `<stem>.pmnn`, `<stem>.tying.toml` and `<stem>.meta.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        save_checkpoint(stem, &self.net, self.meta.seed)?;
        self.tying.save(&tying_path(stem))?;
        fs::write(meta_path(stem), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (net, _) = load_checkpoint::<f64>(stem)?;
        let tying = TiedStateInventory::load(&tying_path(stem))?;
        let mpath = meta_path(stem);
        if !mpath.exists() {
            return Err(Error::MissingArtifact(mpath));
        }
        let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(mpath)?)?;
        Error::check_dim("model output", tying.class_count(), net.output_dim())?;
        Ok(Self {
            name: tying.language().to_string(),
            tying,
            net,
            meta,
        })
    }

    /// Files written by [`AcousticModel::save`].
    /// SHA-256 over the encoded parameters and the tying manifest.
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(encode_params(&self.net));
        h.update(self.tying.to_manifest()?.as_bytes());
        Ok(hex::encode(h.finalize()))
    }

    pub fn files(stem: &Path) -> Vec<PathBuf> {
        vec![
            stem.with_extension("toml"),
            stem.with_extension("pmnn"),
            tying_path(stem),
            meta_path(stem),
        ]
    }
}

fn tying_path(stem: &Path) -> PathBuf {
    stem.with_extension("tying.toml")
}

fn meta_path(stem: &Path) -> PathBuf {
    stem.with_extension("meta.json")
}

fn data_fingerprint(parts: &[&FrameCorpus]) -> String {
    let mut h = Sha256::new();
    for c in parts {
        h.update(c.fingerprint().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Rows whose label has a class, as (row indices, class labels).
fn labelled_rows(labels: &[u32]) -> (Vec<usize>, Vec<usize>) {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != NO_CLASS)
        .map(|(i, &l)| (i, l as usize))
        .unzip()
}

fn select_rows(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    if rows.len() == x.nrows() {
        x.to_owned()
    } else {
        x.select(Axis(0), rows)
    }
}

fn tied_error(probs: ArrayView2<f64>, labels: &[u32]) -> f64 {
    let wrong = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &l)| l == NO_CLASS || crate::math::argmax(row.as_slice().unwrap()) != l as usize)
        .count();
    wrong as f64 / labels.len().max(1) as f64
}

#[allow(clippy::too_many_arguments)]
fn fit(
    name: &str,
    tying: TiedStateInventory,
    train_x: ArrayView2<f64>,
    train_y: &[u32],
    val_x: ArrayView2<f64>,
    val_y: &[u32],
    cfg: &AmConfig,
    fingerprint: String,
) -> Result<AcousticModel> {
    let classes = tying.class_count();
    let (train_rows, train_labels) = labelled_rows(train_y);
    let (val_rows, val_labels) = labelled_rows(val_y);
    let tx = select_rows(train_x, &train_rows);
    let vx = select_rows(val_x, &val_rows);

    let mut dims = vec![train_x.ncols()];
    dims.extend(&cfg.hidden_layers);
    dims.push(classes);
    let init = NetworkParams::random(&dims, cfg.activation, cfg.train.rng_seed)?;
    let data = Samples::new(tx.view(), Targets::Classes { labels: &train_labels, classes })?;
    let val = Samples::new(vx.view(), Targets::Classes { labels: &val_labels, classes })?;
    let outcome = train(&init, data, val, &cfg.train)?;

    let val_frame_error = if val_y.is_empty() {
        f64::NAN
    } else {
        tied_error(forward_chunked(&outcome.net, val_x)?.view(), val_y)
    };
    log::info!(
        "acoustic model {name}: {classes} classes, val frame error {:.4}",
        val_frame_error
    );
    Ok(AcousticModel {
        name: name.to_string(),
        tying,
        net: outcome.net,
        meta: ModelMeta {
            seed: cfg.train.rng_seed,
            config: cfg.train.clone(),
            data_fingerprint: fingerprint,
            train_frames: train_labels.len(),
            val_frame_error,
            history: outcome.history,
        },
    })
}

/// Trains a classifier for `lang` on `train` against the tied classes of `tying`.
/// Frames whose biphone has no class are skipped in training and count as errors on `val`.
pub fn train_acoustic_model(
    train: &FrameCorpus,
    val: &FrameCorpus,
    lang: &LanguageSpec,
    tying: TiedStateInventory,
    cfg: &AmConfig,
) -> Result<AcousticModel> {
    train.validate_against(lang)?;
    val.validate_against(lang)?;
    let train_y = tying.translate_labels(train, lang)?;
    let val_y = tying.translate_labels(val, lang)?;
    fit(
        lang.name(),
        tying,
        train.features(),
        &train_y,
        val.features(),
        &val_y,
        cfg,
        data_fingerprint(&[train, val]),
    )
}

/// Ties states on `train` using the configured fraction, then trains.
pub fn train_monolingual(
    train: &FrameCorpus,
    val: &FrameCorpus,
    lang: &LanguageSpec,
    cfg: &AmConfig,
) -> Result<AcousticModel> {
    let attested = attested_count(train);
    let k = class_count_for(cfg.tying_fraction, attested);
    let tying = super::tying::tie_states(train, lang, k, cfg.min_solo_frames)?;
    train_acoustic_model(train, val, lang, tying, cfg)
}

fn attested_count(corpus: &FrameCorpus) -> usize {
    let mut seen: Vec<u32> = corpus.labels().to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Frame-level error rates of a stream labeled with tied classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameErrors {
    pub frames: usize,
    /// Fraction of frames whose argmax class differs from the reference class.
    pub tied_class: f64,
    /// Fraction of frames whose argmax cluster does not contain the reference biphone.
    pub biphone_lenient: f64,
}

/// Frame error of `stream` against `tying`. Frames whose biphone has no class
/// in `tying` count as errors under both measures.
pub fn frame_error(stream: &PosteriorStream, tying: &TiedStateInventory) -> Result<FrameErrors> {
    if stream.is_empty() {
        return Err(Error::Empty("frame_error stream"));
    }
    if stream.label_space() != LabelSpace::TiedClass {
        return Err(Error::InvalidArgument(format!(
            "stream of {} on {} carries biphone labels, not tied classes",
            stream.model_language(),
            stream.corpus_language()
        )));
    }
    Error::check_dim("stream classes", tying.class_count(), stream.classes())?;
    let wrong = stream
        .argmax()
        .into_iter()
        .zip(stream.labels())
        .filter(|&(pred, &label)| label == NO_CLASS || pred != label as usize)
        .count();
    let n = stream.len() as f64;
    Ok(FrameErrors {
        frames: stream.len(),
        tied_class: wrong as f64 / n,
        // clusters partition the attested biphones, so the predicted cluster
        // holds the true biphone exactly when the classes agree
        biphone_lenient: wrong as f64 / n,
    })
}

/// Posterior stream of `model` on `corpus`. Labels are tied classes when the
/// model's tying covers the corpus language and raw biphone indices otherwise.
pub fn posteriors(model: &AcousticModel, corpus: &FrameCorpus, lang: &LanguageSpec) -> Result<PosteriorStream> {
    Error::check_dim("corpus feature dimension", model.net.input_dim(), corpus.dim())?;
    let probs = forward_chunked(&model.net, corpus.features())?;
    let (labels, space) = if model.tying.covers(corpus.language()) {
        (model.tying.translate_labels(corpus, lang)?, LabelSpace::TiedClass)
    } else {
        corpus.validate_against(lang)?;
        (corpus.labels().to_vec(), LabelSpace::Biphone)
    };
    PosteriorStream::new(
        probs,
        labels,
        space,
        model.name.clone(),
        corpus.language(),
        corpus.fingerprint(),
    )
}

/// One language's share of pooled training data.
#[derive(Debug, Clone, Copy)]
pub struct PooledPart<'a> {
    pub lang: &'a LanguageSpec,
    pub train: &'a FrameCorpus,
    pub val: &'a FrameCorpus,
}

/// Union of the biphone inventories in language order, shared symbols unified.
pub fn union_inventory(langs: &[&LanguageSpec]) -> Vec<Biphone> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for l in langs {
        for b in l.biphones() {
            if !seen.contains_key(b) {
                seen.insert(b.clone(), out.len());
                out.push(b.clone());
            }
        }
    }
    out
}

/// Trains one classifier on the concatenated corpora of every part, over
/// states tied on the pooled data.
pub fn train_pooled_model(parts: &[PooledPart], cfg: &AmConfig) -> Result<AcousticModel> {
    if parts.len() < 2 {
        return Err(Error::InvalidArgument("pooling needs at least two corpora".into()));
    }
    for p in parts {
        p.train.validate_against(p.lang)?;
        p.val.validate_against(p.lang)?;
    }
    let langs: Vec<&LanguageSpec> = parts.iter().map(|p| p.lang).collect();
    let inventory = union_inventory(&langs);
    let index: HashMap<&Biphone, usize> = inventory.iter().enumerate().map(|(i, b)| (b, i)).collect();
    let mut covers: Vec<String> = Vec::new();
    for l in &langs {
        if !covers.iter().any(|c| c == l.name()) {
            covers.push(l.name().to_string());
        }
    }

    let union_labels = |c: &FrameCorpus, l: &LanguageSpec| -> Vec<usize> {
        c.labels()
            .iter()
            .map(|&b| index[&l.biphones()[b as usize]])
            .collect()
    };
    let train_views: Vec<_> = parts.iter().map(|p| p.train.features()).collect();
    let val_views: Vec<_> = parts.iter().map(|p| p.val.features()).collect();
    let train_x = concatenate(Axis(0), &train_views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let val_x = concatenate(Axis(0), &val_views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let train_u: Vec<usize> = parts.iter().flat_map(|p| union_labels(p.train, p.lang)).collect();

    let mut attested = train_u.clone();
    attested.sort_unstable();
    attested.dedup();
    let k = class_count_for(cfg.tying_fraction, attested.len());
    let tying = tie_frames(
        POOLED_NAME,
        covers,
        inventory,
        train_x.view(),
        &train_u,
        k,
        cfg.min_solo_frames,
    )?;

    let mut train_y = Vec::with_capacity(train_u.len());
    let mut val_y = Vec::new();
    for p in parts {
        train_y.extend(tying.translate_labels(p.train, p.lang)?);
        val_y.extend(tying.translate_labels(p.val, p.lang)?);
    }
    let corpora: Vec<&FrameCorpus> = parts.iter().flat_map(|p| [p.train, p.val]).collect();
    fit(
        POOLED_NAME,
        tying,
        train_x.view(),
        &train_y,
        val_x.view(),
        &val_y,
        cfg,
        data_fingerprint(&corpora),
    )
}

/// Frame error change per shared phoneme between a monolingual and a pooled model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeDelta {
    pub phoneme: Phoneme,
    pub frames: usize,
    pub mono_error: f64,
    pub pooled_error: f64,
    /// `pooled_error − mono_error` in percentage points.
    pub delta_points: f64,
    /// `100 · (pooled − mono) / mono`; absent when the monolingual error is 0.
    pub relative_change_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationTable {
    pub language: String,
    pub rows: Vec<PhonemeDelta>,
    /// Shared phonemes with no test frames.
    pub excluded: Vec<Phoneme>,
}

impl DegradationTable {
    /// Frame-weighted mean of `delta_points` (0 when there are no rows).
    pub fn mean_delta_points(&self) -> f64 {
        let frames: usize = self.rows.iter().map(|r| r.frames).sum();
        if frames == 0 {
            return 0.0;
        }
        self.rows.iter().map(|r| r.delta_points * r.frames as f64).sum::<f64>() / frames as f64
    }

    /// Rows where the pooled model is worse.
    pub fn degraded(&self) -> usize {
        self.rows.iter().filter(|r| r.delta_points > 0.0).count()
    }
}

/// Per shared phoneme of `lang` (present in at least one of `others`), the
/// tied-class frame error of `mono` and `pooled` over test frames whose biphone
/// is centered on it. Each model is scored against its own tying.
pub fn per_class_error_delta(
    mono: &AcousticModel,
    pooled: &AcousticModel,
    test: &FrameCorpus,
    lang: &LanguageSpec,
    others: &[&LanguageSpec],
) -> Result<DegradationTable> {
    let mono_s = posteriors(mono, test, lang)?;
    let pooled_s = posteriors(pooled, test, lang)?;
    for s in [&mono_s, &pooled_s] {
        if s.label_space() != LabelSpace::TiedClass {
            return Err(Error::InvalidArgument(format!(
                "model {} does not cover language {}",
                s.model_language(),
                lang.name()
            )));
        }
    }
    let shared: Vec<&Phoneme> = lang
        .phonemes()
        .iter()
        .filter(|p| others.iter().any(|o| o.name() != lang.name() && o.has_phoneme(p)))
        .collect();
    let slot: HashMap<&Phoneme, usize> = shared.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let mut counts = vec![(0usize, 0usize, 0usize); shared.len()];
    let mono_pred = mono_s.argmax();
    let pooled_pred = pooled_s.argmax();
    for t in 0..test.len() {
        let center = &lang.biphones()[test.labels()[t] as usize].center;
        let Some(&i) = slot.get(center) else { continue };
        let wrong = |pred: usize, label: u32| label == NO_CLASS || pred != label as usize;
        counts[i].0 += 1;
        counts[i].1 += wrong(mono_pred[t], mono_s.labels()[t]) as usize;
        counts[i].2 += wrong(pooled_pred[t], pooled_s.labels()[t]) as usize;
    }
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (p, (n, m, q)) in shared.into_iter().zip(counts) {
        if n == 0 {
            excluded.push(p.clone());
            continue;
        }
        let mono_error = m as f64 / n as f64;
        let pooled_error = q as f64 / n as f64;
        rows.push(PhonemeDelta {
            phoneme: p.clone(),
            frames: n,
            mono_error,
            pooled_error,
            delta_points: 100.0 * (pooled_error - mono_error),
            relative_change_pct: (m > 0).then(|| 100.0 * (pooled_error - mono_error) / mono_error),
        });
    }
    Ok(DegradationTable {
        language: lang.name().to_string(),
        rows,
        excluded,
    })
}
