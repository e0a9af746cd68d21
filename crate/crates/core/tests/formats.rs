use std::fs;
use std::path::Path;

use posterior_map::acoustic::{posteriors, train_monolingual, AcousticModel, AmConfig};
use posterior_map::config::ExperimentConfig;
use posterior_map::mapping::{build_training_pairs, train_mapping, MapConfig, MappingNetwork};
use posterior_map::math::checkpoint::{blob_path, manifest_path};
use posterior_map::math::{load_checkpoint, save_checkpoint, Activation, NetworkParams, TrainConfig};
use posterior_map::stream::PosteriorStream;
use posterior_map::synth::{make_language_family, sample_corpus, split_corpus, FrameCorpus, LanguageSpec};
use posterior_map::Error;

fn same_bytes(a: &Path, b: &Path) {
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{} vs {}", a.display(), b.display());
}

fn family() -> Vec<LanguageSpec> {
    make_language_family(&ExperimentConfig::small(11).family).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let net = NetworkParams::<f64>::random(&[5, 7, 3], Activation::Tanh, 42).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    save_checkpoint(&a, &net, 42).unwrap();
    let (back, manifest) = load_checkpoint::<f64>(&a).unwrap();
    assert_eq!(back, net);
    assert_eq!(manifest.seed, 42);
    save_checkpoint(&b, &back, 42).unwrap();
    same_bytes(&blob_path(&a), &blob_path(&b));
    let blob = fs::read(blob_path(&a)).unwrap();
    assert_eq!(&blob[..4], b"PMNN");
    assert_eq!(u32::from_le_bytes(blob[4..8].try_into().unwrap()), 1);

    let mut bad = blob.clone();
    bad[0] = b'X';
    fs::write(blob_path(&b), &bad).unwrap();
    assert!(matches!(load_checkpoint::<f64>(&b), Err(Error::Format { .. })));
    fs::write(blob_path(&b), &blob[..blob.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint::<f64>(&b), Err(Error::Format { .. })));
    fs::remove_file(manifest_path(&b)).unwrap();
    assert!(matches!(load_checkpoint::<f64>(&b), Err(Error::MissingArtifact(_))));
}

#[test]
fn corpus_and_language_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fam = family();
    let corpus = sample_corpus(&fam[0], 1500, 3).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    corpus.save(&a).unwrap();
    let back = FrameCorpus::load(&a).unwrap();
    assert_eq!(back, corpus);
    assert_eq!(back.fingerprint(), corpus.fingerprint());
    back.save(&b).unwrap();
    same_bytes(&a.with_extension("pmfc"), &b.with_extension("pmfc"));
    same_bytes(&a.with_extension("toml"), &b.with_extension("toml"));
    let bytes = fs::read(a.with_extension("pmfc")).unwrap();
    assert_eq!(&bytes[..4], b"PMFC");

    let lpath = dir.path().join("lang.toml");
    fam[1].save(&lpath).unwrap();
    let lang = LanguageSpec::load(&lpath).unwrap();
    assert_eq!(lang, fam[1]);
    assert_eq!(lang.to_manifest().unwrap(), fam[1].to_manifest().unwrap());
}

#[test]
fn models_and_streams_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fam = family();
    let train_cfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let am_cfg = AmConfig {
        hidden_layers: vec![16],
        train: train_cfg.clone(),
        ..AmConfig::default()
    };
    let corpora: Vec<Vec<FrameCorpus>> = fam
        .iter()
        .take(2)
        .map(|l| {
            let c = sample_corpus(l, 3000, 5).unwrap();
            split_corpus(&c, &[0.8, 0.2], 1)
                .unwrap()
                .into_iter()
                .map(|p| p.corpus)
                .collect()
        })
        .collect();
    let a = train_monolingual(&corpora[0][0], &corpora[0][1], &fam[0], &am_cfg).unwrap();
    let b = train_monolingual(&corpora[1][0], &corpora[1][1], &fam[1], &am_cfg).unwrap();

    let stem = dir.path().join("am");
    a.save(&stem).unwrap();
    let back = AcousticModel::load(&stem).unwrap();
    assert_eq!(back.net(), a.net());
    assert_eq!(back.tying(), a.tying());
    assert_eq!(back.meta(), a.meta());
    assert_eq!(back.fingerprint().unwrap(), a.fingerprint().unwrap());
    let stem2 = dir.path().join("am2");
    back.save(&stem2).unwrap();
    for (x, y) in AcousticModel::files(&stem).iter().zip(AcousticModel::files(&stem2).iter()) {
        same_bytes(x, y);
    }

    let target: Vec<PosteriorStream> = corpora[0].iter().map(|c| posteriors(&a, c, &fam[0]).unwrap()).collect();
    let source: Vec<PosteriorStream> = corpora[0].iter().map(|c| posteriors(&b, c, &fam[0]).unwrap()).collect();
    let map_cfg = MapConfig {
        train: train_cfg,
        ..MapConfig::default()
    };
    let net = train_mapping(
        &build_training_pairs(&source[0], &target[0]).unwrap(),
        &build_training_pairs(&source[1], &target[1]).unwrap(),
        &map_cfg,
    )
    .unwrap();
    let mstem = dir.path().join("map");
    net.save(&mstem).unwrap();
    let mback = MappingNetwork::load(&mstem).unwrap();
    assert_eq!(mback.net(), net.net());
    assert_eq!(mback.meta(), net.meta());

    let spath = dir.path().join("s.pmps");
    target[1].save(&spath).unwrap();
    let sback = PosteriorStream::load(&spath).unwrap();
    assert_eq!(sback, target[1]);
    let spath2 = dir.path().join("s2.pmps");
    sback.save(&spath2).unwrap();
    same_bytes(&spath, &spath2);
    let bytes = fs::read(&spath).unwrap();
    assert_eq!(&bytes[..4], b"PMPS");
    assert!(matches!(
        PosteriorStream::decode(&bytes[..bytes.len() - 1]),
        Err(Error::Format { .. })
    ));
}

#[test]
fn config_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::small(5);
    let path = dir.path().join("c.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let back = ExperimentConfig::load(&path).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_toml().unwrap(), cfg.to_toml().unwrap());
    assert!(matches!(
        ExperimentConfig::load(&dir.path().join("missing.toml")),
        Err(Error::Config(_))
    ));
    fs::write(&path, "format_version = 2").unwrap();
    assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config(_))));
}
