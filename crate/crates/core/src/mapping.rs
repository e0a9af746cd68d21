//! Mapping networks: translate one model's posteriors into another model's class space.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::network::forward_chunked;
use crate::math::prob::entropy_slice;
use crate::math::{load_checkpoint, save_checkpoint, train, Activation, NetworkParams, Samples, Targets};
use crate::math::{TrainConfig, TrainHistory};
use crate::scalar::Scalar;
use crate::stream::PosteriorStream;
use crate::table::Table;

/// Frame-aligned (source posterior, target posterior) pairs from one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedData {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub source_model: String,
    pub target_model: String,
    pub corpus_fingerprint: String,
}

impl PairedData {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

/// Pairs frame `t` of `source` with frame `t` of `target`. Both streams must
/// come from the same corpus.
pub fn build_training_pairs(source: &PosteriorStream, target: &PosteriorStream) -> Result<PairedData> {
    source.check_aligned(target)?;
    Ok(PairedData {
        inputs: source.probs().to_owned(),
        targets: target.probs().to_owned(),
        source_model: source.model_language().to_string(),
        target_model: target.model_language().to_string(),
        corpus_fingerprint: source.corpus_fingerprint().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    /// Hidden widths; empty means one layer of `2 · max(d_S, d_A)`.
    #[serde(default)]
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    /// Feed floored log-posteriors instead of posteriors (experimental).
    #[serde(default)]
    pub log_input: bool,
    /// Train on per-dimension standardized inputs, folded back into the first
    /// layer afterwards so the stored network still reads raw inputs.
    #[serde(default = "default_true")]
    pub standardize_inputs: bool,
    pub train: TrainConfig,
}

fn default_true() -> bool {
    true
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            hidden_layers: Vec::new(),
            activation: Activation::Tanh,
            log_input: false,
            standardize_inputs: true,
            train: TrainConfig {
                learning_rate: 0.5,
                max_epochs: 10,
                ..TrainConfig::default()
            },
        }
    }
}

impl MapConfig {
    pub fn layer_dims(&self, d_source: usize, d_target: usize) -> Vec<usize> {
        let mut dims = vec![d_source];
        if self.hidden_layers.is_empty() {
            dims.push(2 * d_source.max(d_target));
        } else {
            dims.extend(&self.hidden_layers);
        }
        dims.push(d_target);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub source_model: String,
    pub target_model: String,
    /// Data fingerprints of the source and target acoustic models.
    pub source_fingerprint: String,
    pub target_fingerprint: String,
    pub seed: u64,
    pub log_input: bool,
    pub config: TrainConfig,
    pub train_frames: usize,
    /// Mean KL(target ‖ mapped) on the validation pairs.
    pub val_kl: f64,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingNetwork {
    net: NetworkParams<f64>,
    meta: MapMeta,
}

fn transform_input(x: ArrayView2<f64>, log_input: bool) -> Array2<f64> {
    if log_input {
        let floor = f64::prob_floor();
        x.mapv(|v| v.max(floor).ln())
    } else {
        x.to_owned()
    }
}

/// Mean KL(target ‖ net(input)) over the pairs.
fn pairs_kl(net: &NetworkParams<f64>, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
    Samples::new(inputs, Targets::Dense(targets))
        .map(|s| s.mean_loss(net))
        .unwrap_or(f64::NAN)
}

impl MappingNetwork {
    pub fn net(&self) -> &NetworkParams<f64> {
        &self.net
    }

    pub fn meta(&self) -> &MapMeta {
        &self.meta
    }

    pub fn source_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn target_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Records the acoustic models this network connects.
    pub fn with_model_fingerprints(mut self, source: impl Into<String>, target: impl Into<String>) -> Self {
        self.meta.source_fingerprint = source.into();
        self.meta.target_fingerprint = target.into();
        self
    }

    /// Writes `<stem>.toml`, `<stem>.pmnn` and `<stem>.map.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        save_checkpoint(stem, &self.net, self.meta.seed)?;
        fs::write(meta_path(stem), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (net, _) = load_checkpoint::<f64>(stem)?;
        let mpath = meta_path(stem);
        if !mpath.exists() {
            return Err(Error::MissingArtifact(mpath));
        }
        let meta = serde_json::from_str(&fs::read_to_string(mpath)?)?;
        Ok(Self { net, meta })
    }

    pub fn files(stem: &Path) -> Vec<PathBuf> {
        vec![stem.with_extension("toml"), stem.with_extension("pmnn"), meta_path(stem)]
    }
}

fn meta_path(stem: &Path) -> PathBuf {
    stem.with_extension("map.json")
}

/// Floor on the per-input scale, keeps near-constant posterior columns tame.
const MIN_INPUT_SCALE: f64 = 0.01;

/// Per-dimension affine input scaling `(x − μ) / σ`.
#[derive(Debug, Clone)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
        let scale = x
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, &m)| {
                let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                sd.max(MIN_INPUT_SCALE)
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    /// Network on raw inputs equivalent to `net` on scaled inputs.
    fn fold_into(&self, net: &NetworkParams<f64>) -> Result<NetworkParams<f64>> {
        let mut weights = net.weights().to_vec();
        let mut biases = net.biases().to_vec();
        for (k, mut row) in weights[0].rows_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[k], self.scale[k]);
            if m == 0.0 && s == 1.0 {
                continue;
            }
            row.mapv_inplace(|w| w / s);
            biases[0].scaled_add(-m, &row);
        }
        NetworkParams::from_parts(net.layer_dims().to_vec(), weights, biases, net.activation())
    }
}

/// Trains a mapping network minimizing mean KL(target ‖ mapped).
pub fn train_mapping(pairs: &PairedData, val_pairs: &PairedData, cfg: &MapConfig) -> Result<MappingNetwork> {
    if pairs.is_empty() {
        return Err(Error::Empty("mapping training pairs"));
    }
    let (ds, da) = (pairs.inputs.ncols(), pairs.targets.ncols());
    if !val_pairs.is_empty() {
        Error::check_dim("validation source dimension", ds, val_pairs.inputs.ncols())?;
        Error::check_dim("validation target dimension", da, val_pairs.targets.ncols())?;
    }
    let x = transform_input(pairs.inputs.view(), cfg.log_input);
    let vx = transform_input(val_pairs.inputs.view(), cfg.log_input);
    let scaling = if cfg.standardize_inputs {
        Standardizer::fit(x.view())
    } else {
        Standardizer::identity(ds)
    };
    let (zx, zvx) = (scaling.apply(x.view()), scaling.apply(vx.view()));
    let init = NetworkParams::random(&cfg.layer_dims(ds, da), cfg.activation, cfg.train.rng_seed)?;
    let data = Samples::new(zx.view(), Targets::Dense(pairs.targets.view()))?;
    let val = Samples::new(zvx.view(), Targets::Dense(val_pairs.targets.view()))?;
    let mut outcome = train(&init, data, val, &cfg.train)?;
    outcome.net = scaling.fold_into(&outcome.net)?;
    let val_kl = if val_pairs.is_empty() {
        f64::NAN
    } else {
        pairs_kl(&outcome.net, vx.view(), val_pairs.targets.view())
    };
    log::info!(
        "mapping {} -> {}: val KL {:.4}",
        pairs.source_model,
        pairs.target_model,
        val_kl
    );
    Ok(MappingNetwork {
        net: outcome.net,
        meta: MapMeta {
            source_model: pairs.source_model.clone(),
            target_model: pairs.target_model.clone(),
            source_fingerprint: String::new(),
            target_fingerprint: String::new(),
            seed: cfg.train.rng_seed,
            log_input: cfg.log_input,
            config: cfg.train.clone(),
            train_frames: pairs.len(),
            val_kl,
            history: outcome.history,
        },
    })
}

/// Mean KL(target ‖ mapnet(source)) over aligned pairs.
pub fn mapping_kl(mapnet: &MappingNetwork, pairs: &PairedData) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("mapping evaluation pairs"));
    }
    Error::check_dim("mapping input", mapnet.source_dim(), pairs.inputs.ncols())?;
    Error::check_dim("mapping output", mapnet.target_dim(), pairs.targets.ncols())?;
    let x = transform_input(pairs.inputs.view(), mapnet.meta.log_input);
    Ok(pairs_kl(&mapnet.net, x.view(), pairs.targets.view()))
}

/// Maps every frame of `source` into the target class space; labels carried through.
pub fn map_stream(mapnet: &MappingNetwork, source: &PosteriorStream) -> Result<PosteriorStream> {
    Error::check_dim("mapped stream classes", mapnet.source_dim(), source.classes())?;
    let x = transform_input(source.probs(), mapnet.meta.log_input);
    let probs = forward_chunked(&mapnet.net, x.view())?;
    let name = format!("{}->{}", mapnet.meta.source_model, mapnet.meta.target_model);
    source.with_probs(probs, name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub source_class: usize,
    pub mapped: Vec<f64>,
    pub entropy: f64,
}

/// Output and entropy of the network for each one-hot source vector, in class order.
pub fn probe_one_hot(mapnet: &MappingNetwork) -> Result<Vec<ProbeRow>> {
    let ds = mapnet.source_dim();
    let eye = Array2::from_shape_fn((ds, ds), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let x = transform_input(eye.view(), mapnet.meta.log_input);
    let out = forward_chunked(&mapnet.net, x.view())?;
    Ok(out
        .rows()
        .into_iter()
        .enumerate()
        .map(|(k, row)| {
            let mapped = row.to_vec();
            ProbeRow {
                source_class: k,
                entropy: entropy_slice(&mapped),
                mapped,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorgramRow {
    pub source_class: usize,
    pub entropy: f64,
    /// `(mapped class, probability)`, most probable first.
    pub top: Vec<(usize, f64)>,
}

/// The `n` lowest-entropy probe rows, entropy ascending (ties by class), each
/// with its `top_k` most probable mapped classes.
pub fn top_n_posteriorgram(probes: &[ProbeRow], n: usize, top_k: usize) -> Result<Vec<PosteriorgramRow>> {
    if n == 0 || n > probes.len() {
        return Err(Error::InvalidArgument(format!("n = {n} outside 1..={}", probes.len())));
    }
    let classes = probes[0].mapped.len();
    if top_k == 0 || top_k > classes {
        return Err(Error::InvalidArgument(format!("top_k = {top_k} outside 1..={classes}")));
    }
    let mut order: Vec<&ProbeRow> = probes.iter().collect();
    order.sort_by(|a, b| a.entropy.total_cmp(&b.entropy).then(a.source_class.cmp(&b.source_class)));
    Ok(order
        .into_iter()
        .take(n)
        .map(|r| {
            let mut idx: Vec<usize> = (0..r.mapped.len()).collect();
            idx.sort_by(|&a, &b| r.mapped[b].total_cmp(&r.mapped[a]).then(a.cmp(&b)));
            PosteriorgramRow {
                source_class: r.source_class,
                entropy: r.entropy,
                top: idx.into_iter().take(top_k).map(|c| (c, r.mapped[c])).collect(),
            }
        })
        .collect())
}

/// Mean entropy of posteriorgram rows.
pub fn mean_entropy(rows: &[PosteriorgramRow]) -> f64 {
    rows.iter().map(|r| r.entropy).sum::<f64>() / rows.len().max(1) as f64
}

/// Header of the posteriorgram CSV for `top_k` columns.
pub fn posteriorgram_header(top_k: usize) -> Vec<String> {
    let mut h = vec!["source_class".to_string(), "entropy".to_string()];
    for i in 1..=top_k {
        h.push(format!("mapped_class_{i}"));
        h.push(format!("prob_{i}"));
    }
    h
}

pub fn posteriorgram_table(rows: &[PosteriorgramRow]) -> Table {
    let top_k = rows.first().map_or(0, |r| r.top.len());
    let mut t = Table::new(posteriorgram_header(top_k));
    for r in rows {
        let mut rec = vec![r.source_class.to_string(), r.entropy.to_string()];
        for (c, p) in &r.top {
            rec.push(c.to_string());
            rec.push(p.to_string());
        }
        t.push(rec).expect("rows share one top_k");
    }
    t
}

pub fn write_posteriorgram_csv<W: Write>(out: W, rows: &[PosteriorgramRow]) -> Result<()> {
    posteriorgram_table(rows).write_csv(out, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::LabelSpace;
    use ndarray::array;

    fn stream(probs: Array2<f64>, fp: &str) -> PosteriorStream {
        let n = probs.nrows();
        PosteriorStream::new(probs, vec![0; n], LabelSpace::TiedClass, "m", "la", fp).unwrap()
    }

    #[test]
    fn pairs_keep_frame_order_and_check_corpus() {
        let s = stream(array![[0.5, 0.5], [0.9, 0.1]], "x");
        let t = stream(array![[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]], "x");
        let p = build_training_pairs(&s, &t).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.inputs.row(1).to_vec(), vec![0.9, 0.1]);
        assert_eq!(p.targets.ncols(), 3);
        let other = stream(array![[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]], "y");
        assert!(matches!(build_training_pairs(&s, &other), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn default_hidden_width_is_twice_the_larger_side() {
        assert_eq!(MapConfig::default().layer_dims(10, 7), vec![10, 20, 7]);
        assert_eq!(MapConfig::default().layer_dims(3, 9), vec![3, 18, 9]);
    }

    #[test]
    fn posteriorgram_ordering() {
        let probes = vec![
            ProbeRow { source_class: 0, mapped: vec![0.5, 0.5], entropy: 2f64.ln() },
            ProbeRow { source_class: 1, mapped: vec![0.1, 0.9], entropy: entropy_slice(&[0.1, 0.9]) },
            ProbeRow { source_class: 2, mapped: vec![0.9, 0.1], entropy: entropy_slice(&[0.9, 0.1]) },
        ];
        let g = top_n_posteriorgram(&probes, 3, 1).unwrap();
        assert_eq!(g.iter().map(|r| r.source_class).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert_eq!(g[0].top, vec![(1, 0.9)]);
        assert_eq!(g[1].top, vec![(0, 0.9)]);
        assert!(g.windows(2).all(|w| w[0].entropy <= w[1].entropy));
        assert!(top_n_posteriorgram(&probes, 4, 1).is_err());
        assert!(top_n_posteriorgram(&probes, 1, 3).is_err());
        let mut buf = Vec::new();
        write_posteriorgram_csv(&mut buf, &g[..1]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("source_class,entropy,mapped_class_1,prob_1\n1,"));
    }
}
