//! Staged experiment pipeline over one output directory.
//!
//! Layout under the output root:
//!
//! ```text
//! config.toml
//! manifests/<stage>.json      checksums of every file a stage wrote
//! languages/<lang>.toml
//! corpora/<lang>/{train,val,test}.{toml,pmfc}, split.json
//! models/<lang>.*, models/pooled.*, models/summary.csv
//! mapping/<src>_to_<tgt>.*, mapping/summary.csv
//! analysis/  overlap, subsets, similarity, probes, degradation tables and posterior streams
//! fusion/    fusion table and weight-search traces
//! report/    every table of the above plus index.json
//! ```
//!
//! Every stage checks the manifests of the stages it reads: the recorded
//! config hash must equal the current one and every file must match its
//! checksum.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::{
    frame_error, per_class_error_delta, posteriors, train_monolingual, train_pooled_model, AcousticModel,
    DegradationTable, PooledPart, POOLED_NAME,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fusion::{fuse_stream, search_weights, WeightSearch};
use crate::mapping::{
    build_training_pairs, map_stream, mean_entropy, posteriorgram_table, probe_one_hot, top_n_posteriorgram,
    train_mapping, MappingNetwork,
};
use crate::similarity::{
    cross_class_map, overlap_table, partition_biphones, samc_correct, similarity_matrix, subset_report,
    SimilarityMatrix, SimilarityReport, Subset,
};
use crate::stream::PosteriorStream;
use crate::synth::{make_language_family, sample_corpus, split_corpus, FrameCorpus, LanguageSpec};
use crate::table::{opt_cell, Table};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Generate,
    TrainAm,
    TrainMap,
    Analyze,
    Fuse,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Generate,
        Stage::TrainAm,
        Stage::TrainMap,
        Stage::Analyze,
        Stage::Fuse,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::TrainAm => "train-am",
            Stage::TrainMap => "train-map",
            Stage::Analyze => "analyze",
            Stage::Fuse => "fuse",
            Stage::Report => "report",
        }
    }
}

/// Files a stage wrote, keyed by path relative to the output root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub config_hash: String,
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn rel_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

struct StageWriter<'a> {
    root: &'a Path,
    stage: Stage,
    hash: &'a str,
    files: BTreeMap<String, String>,
}

impl<'a> StageWriter<'a> {
    fn new(root: &'a Path, stage: Stage, hash: &'a str) -> Self {
        Self {
            root,
            stage,
            hash,
            files: BTreeMap::new(),
        }
    }

    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(p)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.path(rel)?, bytes)?;
        self.files.insert(rel.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn table(&mut self, rel: &str, t: &Table) -> Result<()> {
        let bytes = t.to_csv(Some(self.hash))?;
        self.write(rel, &bytes)
    }

    /// Records files written by someone else.
    fn record(&mut self, paths: impl IntoIterator<Item = PathBuf>) -> Result<()> {
        for p in paths {
            let rel = p.strip_prefix(self.root).map_err(|_| {
                Error::InvalidArgument(format!("{} is outside the output directory", p.display()))
            })?;
            self.files.insert(rel_string(rel), sha256_file(&p)?);
        }
        Ok(())
    }

    fn finish(self) -> Result<StageManifest> {
        let m = StageManifest {
            stage: self.stage,
            config_hash: self.hash.to_string(),
            files: self.files,
        };
        let path = manifest_path(self.root, self.stage);
        fs::create_dir_all(path.parent().expect("manifest has a parent"))?;
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(m)
    }
}

pub fn manifest_path(root: &Path, stage: Stage) -> PathBuf {
    root.join("manifests").join(format!("{}.json", stage.name()))
}

pub fn model_stem(root: &Path, name: &str) -> PathBuf {
    root.join("models").join(name)
}

pub fn mapping_stem(root: &Path, source: &str, target: &str) -> PathBuf {
    root.join("mapping").join(format!("{source}_to_{target}"))
}

pub fn corpus_stem(root: &Path, lang: &str, split: &str) -> PathBuf {
    root.join("corpora").join(lang).join(split)
}

fn stream_path(root: &Path, target: &str, name: &str, split: &str) -> PathBuf {
    root.join("analysis")
        .join("posteriors")
        .join(target)
        .join(format!("{name}_{split}.pmps"))
}

/// Stream name of the target model's own posteriors; not a valid language name.
const TARGET_STREAM: &str = "target-model";

/// Per-language split sizes and the utterances each split took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub language: String,
    pub corpus_fingerprint: String,
    pub frames: usize,
    pub splits: Vec<SplitEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub frames: usize,
    pub fingerprint: String,
    pub utterances: Vec<usize>,
}

/// One row of the fusion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRow {
    pub target: String,
    pub sources: Vec<String>,
    pub search: WeightSearch,
    pub mono_val_error: f64,
    pub mono_test_error: f64,
    pub fused_test_error: f64,
    /// `100 · (mono − fused) / mono` on test.
    pub relative_improvement_pct: f64,
}

/// Monolingual versus pooled test error of one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledComparison {
    pub language: String,
    pub mono_test_error: f64,
    pub pooled_test_error: f64,
    pub degradation: DegradationTable,
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    hash: String,
    root: PathBuf,
    pool: rayon::ThreadPool,
}

struct TrainVal {
    train: FrameCorpus,
    val: FrameCorpus,
}

impl Pipeline {
    /// `jobs == 0` uses one thread per core.
    pub fn new(cfg: ExperimentConfig, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash()?;
        let root = cfg.output_dir.clone();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { cfg, hash, root, pool })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run(&self, stage: Stage) -> Result<StageManifest> {
        log::info!("stage {} (config {})", stage.name(), &self.hash[..12]);
        self.pool.install(|| match stage {
            Stage::Generate => self.generate(),
            Stage::TrainAm => self.train_am(),
            Stage::TrainMap => self.train_map(),
            Stage::Analyze => self.analyze(),
            Stage::Fuse => self.fuse(),
            Stage::Report => self.report(),
        })
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            self.run(stage)?;
        }
        Ok(())
    }

    /// Checks the manifest of `stage` against the current config and the files on disk.
    pub fn verify(&self, stage: Stage) -> Result<StageManifest> {
        let path = manifest_path(&self.root, stage);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let m: StageManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if m.config_hash != self.hash {
            return Err(Error::ConfigHashMismatch {
                path,
                expected: self.hash.clone(),
                found: m.config_hash,
            });
        }
        let mut missing = Vec::new();
        for (rel, expected) in &m.files {
            let p = self.root.join(rel);
            if !p.exists() {
                missing.push(p);
                continue;
            }
            let found = sha256_file(&p)?;
            if &found != expected {
                return Err(Error::ChecksumMismatch {
                    path: p,
                    expected: expected.clone(),
                    found,
                });
            }
        }
        match missing.len() {
            0 => Ok(m),
            1 => Err(Error::MissingArtifact(missing.remove(0))),
            _ => Err(Error::MissingArtifacts(missing)),
        }
    }

    fn write_config(&self, w: &mut StageWriter) -> Result<()> {
        w.write("config.toml", self.cfg.canonical_toml()?.as_bytes())
    }

    fn generate(&self) -> Result<StageManifest> {
        let langs = make_language_family(&self.cfg.family)?;
        let c = &self.cfg.corpus;
        let fractions = c.fractions();
        let parts: Vec<_> = langs
            .par_iter()
            .map(|l| {
                let full = sample_corpus(l, c.total_frames(), c.seed)?;
                let parts = split_corpus(&full, &fractions, c.split_seed)?;
                Ok((full.fingerprint(), full.len(), parts))
            })
            .collect::<Result<_>>()?;

        let mut w = StageWriter::new(&self.root, Stage::Generate, &self.hash);
        self.write_config(&mut w)?;
        for (l, (fingerprint, frames, parts)) in langs.iter().zip(parts) {
            w.write(&format!("languages/{}.toml", l.name()), l.to_manifest()?.as_bytes())?;
            let mut entries = Vec::new();
            for (split, part) in SPLITS.iter().zip(parts) {
                let stem = corpus_stem(&self.root, l.name(), split);
                fs::create_dir_all(stem.parent().expect("corpus stem has a parent"))?;
                part.corpus.save(&stem)?;
                w.record(crate::synth::corpus::corpus_paths(&stem))?;
                entries.push(SplitEntry {
                    name: split.to_string(),
                    frames: part.corpus.len(),
                    fingerprint: part.corpus.fingerprint(),
                    utterances: part.utterances,
                });
            }
            let split = SplitManifest {
                language: l.name().to_string(),
                corpus_fingerprint: fingerprint,
                frames,
                splits: entries,
            };
            w.json(&format!("corpora/{}/split.json", l.name()), &split)?;
            log::info!(
                "{}: {} phonemes, {} biphones, splits {:?}",
                l.name(),
                l.phonemes().len(),
                l.biphones().len(),
                split.splits.iter().map(|s| s.frames).collect::<Vec<_>>()
            );
        }
        w.finish()
    }

    fn load_languages(&self) -> Result<Vec<LanguageSpec>> {
        self.cfg
            .languages()
            .iter()
            .map(|n| LanguageSpec::load(&self.root.join("languages").join(format!("{n}.toml"))))
            .collect()
    }

    fn load_corpora(&self, lang: &str, splits: &[&str]) -> Result<Vec<FrameCorpus>> {
        splits
            .iter()
            .map(|s| FrameCorpus::load(&corpus_stem(&self.root, lang, s)))
            .collect()
    }

    fn load_train_val(&self) -> Result<Vec<TrainVal>> {
        self.cfg
            .languages()
            .iter()
            .map(|l| {
                let mut v = self.load_corpora(l, &SPLITS[..2])?;
                let val = v.pop().expect("two splits");
                let train = v.pop().expect("two splits");
                Ok(TrainVal { train, val })
            })
            .collect()
    }

    fn load_monolingual(&self) -> Result<Vec<AcousticModel>> {
        self.cfg
            .languages()
            .iter()
            .map(|l| AcousticModel::load(&model_stem(&self.root, l)))
            .collect()
    }

    fn train_am(&self) -> Result<StageManifest> {
        self.verify(Stage::Generate)?;
        let langs = self.load_languages()?;
        let corpora = self.load_train_val()?;
        let am = &self.cfg.acoustic;
        let (monos, pooled) = rayon::join(
            || {
                langs
                    .par_iter()
                    .zip(&corpora)
                    .map(|(l, c)| train_monolingual(&c.train, &c.val, l, am))
                    .collect::<Result<Vec<_>>>()
            },
            || {
                let parts: Vec<PooledPart> = langs
                    .iter()
                    .zip(&corpora)
                    .map(|(lang, c)| PooledPart {
                        lang,
                        train: &c.train,
                        val: &c.val,
                    })
                    .collect();
                train_pooled_model(&parts, am)
            },
        );
        let (monos, pooled) = (monos?, pooled?);

        let mut w = StageWriter::new(&self.root, Stage::TrainAm, &self.hash);
        let mut summary = Table::new([
            "model",
            "classes",
            "restricted",
            "train_frames",
            "epochs",
            "val_frame_error",
        ]);
        fs::create_dir_all(self.root.join("models"))?;
        for m in monos.iter().chain(std::iter::once(&pooled)) {
            let stem = model_stem(&self.root, m.name());
            m.save(&stem)?;
            w.record(AcousticModel::files(&stem))?;
            let restricted = m.tying().restricted_flags().iter().filter(|&&r| r).count();
            summary.push(vec![
                m.name().to_string(),
                m.class_count().to_string(),
                restricted.to_string(),
                m.meta().train_frames.to_string(),
                m.meta().history.train_loss.len().to_string(),
                m.meta().val_frame_error.to_string(),
            ])?;
        }
        w.table("models/summary.csv", &summary)?;
        w.finish()
    }

    fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.cfg.languages().len();
        (0..n)
            .flat_map(|t| (0..n).filter(move |&s| s != t).map(move |s| (s, t)))
            .collect()
    }

    fn train_map(&self) -> Result<StageManifest> {
        self.verify(Stage::Generate)?;
        self.verify(Stage::TrainAm)?;
        let langs = self.load_languages()?;
        let monos = self.load_monolingual()?;
        let fingerprints: Vec<String> = monos.iter().map(|m| m.fingerprint()).collect::<Result<_>>()?;
        let names = self.cfg.languages();

        // Pairs are trained one target at a time to bound memory.
        let mut nets = Vec::new();
        for (t, lang) in langs.iter().enumerate() {
            let split = self.load_corpora(lang.name(), &SPLITS[..2])?;
            let target: Vec<PosteriorStream> =
                split.iter().map(|c| posteriors(&monos[t], c, lang)).collect::<Result<_>>()?;
            let trained: Vec<_> = self
                .ordered_pairs()
                .into_par_iter()
                .filter(|&(_, tt)| tt == t)
                .map(|(s, _)| {
                    let src: Vec<PosteriorStream> =
                        split.iter().map(|c| posteriors(&monos[s], c, lang)).collect::<Result<_>>()?;
                    let pairs = build_training_pairs(&src[0], &target[0])?;
                    let val = build_training_pairs(&src[1], &target[1])?;
                    let net = train_mapping(&pairs, &val, &self.cfg.mapping)?
                        .with_model_fingerprints(fingerprints[s].clone(), fingerprints[t].clone());
                    Ok((s, t, net))
                })
                .collect::<Result<_>>()?;
            nets.extend(trained);
        }

        let mut w = StageWriter::new(&self.root, Stage::TrainMap, &self.hash);
        let mut summary = Table::new(["source", "target", "source_dim", "target_dim", "epochs", "val_kl"]);
        fs::create_dir_all(self.root.join("mapping"))?;
        for (s, t, net) in &nets {
            let stem = mapping_stem(&self.root, &names[*s], &names[*t]);
            net.save(&stem)?;
            w.record(MappingNetwork::files(&stem))?;
            summary.push(vec![
                names[*s].clone(),
                names[*t].clone(),
                net.source_dim().to_string(),
                net.target_dim().to_string(),
                net.meta().history.train_loss.len().to_string(),
                net.meta().val_kl.to_string(),
            ])?;
        }
        w.table("mapping/summary.csv", &summary)?;
        w.finish()
    }

    fn load_mapping_nets(&self) -> Result<BTreeMap<(usize, usize), MappingNetwork>> {
        let names = self.cfg.languages();
        let mut missing = Vec::new();
        let mut out = BTreeMap::new();
        for (s, t) in self.ordered_pairs() {
            let stem = mapping_stem(&self.root, &names[s], &names[t]);
            match MappingNetwork::load(&stem) {
                Ok(net) => {
                    out.insert((s, t), net);
                }
                Err(Error::MissingArtifact(p)) => missing.push(p),
                Err(e) => return Err(e),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingArtifacts(missing));
        }
        Ok(out)
    }

    fn analyze(&self) -> Result<StageManifest> {
        self.verify(Stage::Generate)?;
        self.verify(Stage::TrainAm)?;
        self.verify(Stage::TrainMap)?;
        let langs = self.load_languages()?;
        let monos = self.load_monolingual()?;
        let pooled = AcousticModel::load(&model_stem(&self.root, POOLED_NAME))?;
        let nets = self.load_mapping_nets()?;
        let names = self.cfg.languages();
        let an = &self.cfg.analysis;

        let mut w = StageWriter::new(&self.root, Stage::Analyze, &self.hash);
        let mut reports: Vec<SimilarityReport> = Vec::new();
        let mut probe_summary = Table::new(["source", "target", "probe_rows", "mean_entropy"]);
        let mut pooled_rows = Vec::new();
        for (t, lang) in langs.iter().enumerate() {
            let split = self.load_corpora(lang.name(), &SPLITS[1..])?;
            let (val, test) = (&split[0], &split[1]);
            let target_val = posteriors(&monos[t], val, lang)?;
            let target_test = posteriors(&monos[t], test, lang)?;
            for (sp, stream) in [("val", &target_val), ("test", &target_test)] {
                let p = stream_path(&self.root, lang.name(), TARGET_STREAM, sp);
                fs::create_dir_all(p.parent().expect("stream path has a parent"))?;
                stream.save(&p)?;
                w.record([p])?;
            }

            let sources: Vec<usize> = (0..langs.len()).filter(|&s| s != t).collect();
            let per_pair: Vec<_> = sources
                .par_iter()
                .map(|&s| {
                    let net = &nets[&(s, t)];
                    let src_val = posteriors(&monos[s], val, lang)?;
                    let src_test = posteriors(&monos[s], test, lang)?;
                    let mapped_val = map_stream(net, &src_val)?;
                    let mapped_test = map_stream(net, &src_test)?;
                    let part = partition_biphones(lang, &langs[s], monos[s].tying().attested(), monos[t].tying());
                    let ccm = cross_class_map(&part, monos[s].tying());
                    let samc = samc_correct(&src_test, &part, test.labels(), &ccm)?;
                    let report = subset_report(&target_test, &mapped_test, &part, test.labels(), &samc)?;
                    let probes = probe_one_hot(net)?;
                    let n = an.probe_top_n.min(probes.len());
                    let k = an.probe_top_k.min(net.target_dim());
                    let gram = top_n_posteriorgram(&probes, n, k)?;
                    Ok((s, mapped_val, mapped_test, report, gram))
                })
                .collect::<Result<_>>()?;

            for (s, mapped_val, mapped_test, report, gram) in per_pair {
                for (sp, stream) in [("val", &mapped_val), ("test", &mapped_test)] {
                    let p = stream_path(&self.root, lang.name(), &names[s], sp);
                    stream.save(&p)?;
                    w.record([p])?;
                }
                w.table(
                    &format!("analysis/probes/{}_to_{}.csv", names[s], names[t]),
                    &posteriorgram_table(&gram),
                )?;
                probe_summary.push(vec![
                    names[s].clone(),
                    names[t].clone(),
                    gram.len().to_string(),
                    mean_entropy(&gram).to_string(),
                ])?;
                log::info!("D_X({} <- {}) = {:.4}", names[t], names[s], report.d_x);
                reports.push(report);
            }

            let others: Vec<&LanguageSpec> = langs.iter().filter(|o| o.name() != lang.name()).collect();
            let degradation = per_class_error_delta(&monos[t], &pooled, test, lang, &others)?;
            pooled_rows.push(PooledComparison {
                language: lang.name().to_string(),
                mono_test_error: frame_error(&target_test, monos[t].tying())?.tied_class,
                pooled_test_error: frame_error(&posteriors(&pooled, test, lang)?, pooled.tying())?.tied_class,
                degradation,
            });
        }

        let overlap = overlap_table(&langs)?;
        w.table("analysis/overlap.csv", &overlap_csv(&overlap))?;
        w.json("analysis/overlap.json", &overlap)?;

        w.table("analysis/subsets.csv", &subsets_csv(&reports))?;
        w.json("analysis/subsets.json", &reports)?;

        let matrix = similarity_matrix(names, &reports)?;
        w.table("analysis/similarity.csv", &similarity_csv(&matrix))?;
        w.json("analysis/similarity.json", &matrix)?;

        w.table("analysis/probe_entropy.csv", &probe_summary)?;
        w.table("analysis/pooled.csv", &pooled_csv(&pooled_rows)?)?;
        w.table("analysis/degradation.csv", &degradation_csv(&pooled_rows)?)?;
        w.json("analysis/pooled.json", &pooled_rows)?;
        w.finish()
    }

    fn fuse(&self) -> Result<StageManifest> {
        self.verify(Stage::TrainAm)?;
        self.verify(Stage::Analyze)?;
        let monos = self.load_monolingual()?;
        let names = self.cfg.languages();
        let rows: Vec<FusionRow> = (0..names.len())
            .into_par_iter()
            .map(|t| {
                let tgt = &names[t];
                let load = |name: &str, split: &str| PosteriorStream::load(&stream_path(&self.root, tgt, name, split));
                let target_val = load(TARGET_STREAM, "val")?;
                let target_test = load(TARGET_STREAM, "test")?;
                let sources: Vec<String> = names.iter().filter(|s| *s != tgt).cloned().collect();
                let mapped_val: Vec<PosteriorStream> =
                    sources.iter().map(|s| load(s, "val")).collect::<Result<_>>()?;
                let mapped_test: Vec<PosteriorStream> =
                    sources.iter().map(|s| load(s, "test")).collect::<Result<_>>()?;
                let tying = monos[t].tying();
                let search = search_weights(&target_val, &mapped_val, tying, self.cfg.fusion.grid_step)?;
                let mono_val_error = frame_error(&target_val, tying)?.tied_class;
                let mono_test_error = frame_error(&target_test, tying)?.tied_class;
                let fused = fuse_stream(&target_test, &mapped_test, &search.best)?;
                let fused_test_error = frame_error(&fused, tying)?.tied_class;
                let relative_improvement_pct = if mono_test_error > 0.0 {
                    100.0 * (mono_test_error - fused_test_error) / mono_test_error
                } else {
                    0.0
                };
                Ok(FusionRow {
                    target: tgt.clone(),
                    sources,
                    search,
                    mono_val_error,
                    mono_test_error,
                    fused_test_error,
                    relative_improvement_pct,
                })
            })
            .collect::<Result<_>>()?;

        let mut w = StageWriter::new(&self.root, Stage::Fuse, &self.hash);
        let mut header = vec!["target".to_string()];
        header.extend(names.iter().map(|n| format!("weight_{n}")));
        header.extend(
            [
                "mono_val_error",
                "fused_val_error",
                "mono_test_error",
                "fused_test_error",
                "relative_improvement_pct",
            ]
            .map(String::from),
        );
        let mut table = Table::new(header);
        for r in &rows {
            log::info!(
                "fusion {}: test error {:.4} -> {:.4} ({:+.2}%)",
                r.target,
                r.mono_test_error,
                r.fused_test_error,
                r.relative_improvement_pct
            );
            let mut rec = vec![r.target.clone()];
            rec.extend(names.iter().map(|n| weight_of(r, n).to_string()));
            rec.extend([
                r.mono_val_error.to_string(),
                r.search.best_error.to_string(),
                r.mono_test_error.to_string(),
                r.fused_test_error.to_string(),
                r.relative_improvement_pct.to_string(),
            ]);
            table.push(rec)?;
            w.table(&format!("fusion/trace_{}.csv", r.target), &trace_csv(r))?;
        }
        w.table("fusion/fusion.csv", &table)?;
        w.json("fusion/fusion.json", &rows)?;
        w.finish()
    }

    fn report(&self) -> Result<StageManifest> {
        let mut upstream = Vec::new();
        for stage in [Stage::Generate, Stage::TrainAm, Stage::TrainMap, Stage::Analyze, Stage::Fuse] {
            upstream.push(self.verify(stage)?);
        }
        let dir = self.root.join("report");
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        let mut w = StageWriter::new(&self.root, Stage::Report, &self.hash);
        let mut index = Vec::new();
        for m in &upstream {
            for (rel, sha) in &m.files {
                let bundled = rel.ends_with(".csv") || rel.ends_with(".json") || rel == "config.toml";
                if !bundled || rel.starts_with("corpora/") {
                    continue;
                }
                let target = format!("report/{rel}");
                w.write(&target, &fs::read(self.root.join(rel))?)?;
                index.push(IndexEntry {
                    path: rel.clone(),
                    stage: m.stage,
                    sha256: sha.clone(),
                });
            }
        }
        index.sort_by(|a, b| a.path.cmp(&b.path));
        w.json(
            "report/index.json",
            &ReportIndex {
                config_hash: self.hash.clone(),
                files: index,
            },
        )?;
        w.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub config_hash: String,
    pub files: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub path: String,
    pub stage: Stage,
    pub sha256: String,
}

fn weight_of(r: &FusionRow, lang: &str) -> f64 {
    if r.target == lang {
        return r.search.best.target_weight();
    }
    r.sources
        .iter()
        .position(|s| s == lang)
        .map_or(0.0, |i| r.search.best.source_weights()[i])
}

fn trace_csv(r: &FusionRow) -> Table {
    let mut header = vec![format!("weight_{}", r.target)];
    header.extend(r.sources.iter().map(|s| format!("weight_{s}")));
    header.push("val_error".into());
    let mut t = Table::new(header);
    for p in &r.search.trace {
        let mut rec = vec![p.target_weight.to_string()];
        rec.extend(p.source_weights.iter().map(|v| v.to_string()));
        rec.push(p.val_error.to_string());
        t.push(rec).expect("trace points share one source count");
    }
    t
}

pub const OVERLAP_COLUMNS: [&str; 4] = ["language", "other", "shared_phonemes", "overlap_pct"];
pub const SUBSET_COLUMNS: [&str; 11] = [
    "target",
    "source",
    "subset",
    "biphones",
    "frames",
    "mean_kl",
    "mean_kl_samc",
    "samc_correct_pct",
    "mean_entropy",
    "mean_entropy_samc",
    "d_x",
];
pub const SIMILARITY_COLUMNS: [&str; 3] = ["target", "source", "d_x"];
pub const POOLED_COLUMNS: [&str; 5] = [
    "language",
    "mono_test_error",
    "pooled_test_error",
    "delta_points",
    "degraded_phonemes",
];
pub const DEGRADATION_COLUMNS: [&str; 7] = [
    "language",
    "phoneme",
    "frames",
    "mono_error",
    "pooled_error",
    "delta_points",
    "relative_change_pct",
];

fn overlap_csv(o: &crate::similarity::OverlapTable) -> Table {
    let mut t = Table::new(OVERLAP_COLUMNS);
    for (i, a) in o.languages.iter().enumerate() {
        for (j, b) in o.languages.iter().enumerate() {
            t.push(vec![
                a.clone(),
                b.clone(),
                o.shared[i][j].to_string(),
                o.percent[i][j].to_string(),
            ])
            .expect("fixed width");
        }
    }
    t
}

fn subsets_csv(reports: &[SimilarityReport]) -> Table {
    let mut t = Table::new(SUBSET_COLUMNS);
    for r in reports {
        for subset in Subset::ALL {
            let row = r.row(subset);
            t.push(vec![
                r.target.clone(),
                r.source.clone(),
                subset.name().to_string(),
                row.biphones.to_string(),
                row.frames.to_string(),
                opt_cell(row.mean_kl),
                opt_cell(row.mean_kl_samc),
                opt_cell(row.samc_correct_pct),
                opt_cell(row.mean_entropy),
                opt_cell(row.mean_entropy_samc),
                r.d_x.to_string(),
            ])
            .expect("fixed width");
        }
    }
    t
}

fn similarity_csv(m: &SimilarityMatrix) -> Table {
    let mut t = Table::new(SIMILARITY_COLUMNS);
    for (i, target) in m.languages.iter().enumerate() {
        for (j, source) in m.languages.iter().enumerate() {
            t.push(vec![target.clone(), source.clone(), m.values[i][j].to_string()])
                .expect("fixed width");
        }
    }
    t
}

fn pooled_csv(rows: &[PooledComparison]) -> Result<Table> {
    let mut t = Table::new(POOLED_COLUMNS);
    for r in rows {
        t.push(vec![
            r.language.clone(),
            r.mono_test_error.to_string(),
            r.pooled_test_error.to_string(),
            (100.0 * (r.pooled_test_error - r.mono_test_error)).to_string(),
            r.degradation.degraded().to_string(),
        ])?;
    }
    Ok(t)
}

fn degradation_csv(rows: &[PooledComparison]) -> Result<Table> {
    let mut t = Table::new(DEGRADATION_COLUMNS);
    for r in rows {
        for d in &r.degradation.rows {
            t.push(vec![
                r.language.clone(),
                d.phoneme.symbol().to_string(),
                d.frames.to_string(),
                d.mono_error.to_string(),
                d.pooled_error.to_string(),
                d.delta_points.to_string(),
                opt_cell(d.relative_change_pct),
            ])?;
        }
    }
    Ok(t)
}
