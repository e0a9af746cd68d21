use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmap"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let out = pmap(&["config", "--preset", "small"]);
    assert!(out.status.success());
    let path = dir.join("small.toml");
    fs::write(&path, &out.stdout).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn prints_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_config(dir.path());
    let cfg = posterior_map::ExperimentConfig::load(Path::new(&path)).unwrap();
    assert_eq!(cfg, posterior_map::ExperimentConfig::small(cfg.seed));

    let reseeded = pmap(&["--config", &path, "--seed", "99", "config"]);
    let text = String::from_utf8(reseeded.stdout).unwrap();
    assert!(text.contains("seed = 99"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(pmap(&["--config", missing.to_str().unwrap(), "generate"]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "format_version = 1\nseed = \"x\"\n").unwrap();
    assert_eq!(pmap(&["--config", bad.to_str().unwrap(), "generate"]).status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = pmap(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "analyze"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("generate.json"), "{err}");
}

#[test]
fn full_run_and_stage_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out_s = out_dir.to_str().unwrap();
    let out = pmap(&["--config", &cfg, "--out", out_s, "--jobs", "2", "all"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fusion = fs::read(out_dir.join("fusion/fusion.csv")).unwrap();
    assert!(out_dir.join("report/index.json").exists());

    assert!(pmap(&["--config", &cfg, "--out", out_s, "fuse"]).status.success());
    assert_eq!(fs::read(out_dir.join("fusion/fusion.csv")).unwrap(), fusion);

    // a different seed is a different experiment
    let other = pmap(&["--config", &cfg, "--out", out_s, "--seed", "5", "fuse"]);
    assert_eq!(other.status.code(), Some(3));
}
