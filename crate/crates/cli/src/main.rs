use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use posterior_map::pipeline::{Pipeline, Stage};
use posterior_map::{Error, ExperimentConfig};

/// Cross-lingual posterior mapping experiments on synthetic languages.
#[derive(Debug, Parser)]
#[command(name = "pmap", version)]
struct Cli {
    /// Experiment config (TOML). Defaults to the built-in standard family.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; every stage seed is rederived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate language specs and train/val/test corpora.
    Generate,
    /// Train one acoustic model per language plus the pooled model.
    TrainAm,
    /// Train a mapping network for every ordered language pair.
    TrainMap,
    /// Subset KL reports, similarity matrix, overlap, probes, pooled degradation.
    Analyze,
    /// Grid-search fusion weights and score fused posteriors.
    Fuse,
    /// Bundle every table into report/ with an index.
    Report,
    /// Run every stage in order.
    All,
    /// Print the effective config in canonical form.
    Config {
        /// Built-in config to start from when `--config` is not given.
        #[arg(long, value_enum, default_value_t = Preset::Standard)]
        preset: Preset,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Preset {
    /// Three 30-phoneme languages, 60k/2k/4k frames each.
    Standard,
    /// Scaled-down family for smoke runs.
    Small,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Unsatisfiable(_) | Error::TomlDe(_) | Error::TomlSer(_) => 2,
        Error::MissingArtifact(_)
        | Error::MissingArtifacts(_)
        | Error::ChecksumMismatch { .. }
        | Error::ConfigHashMismatch { .. }
        | Error::FingerprintMismatch { .. } => 3,
        Error::Divergence { .. } | Error::InvalidProbability(_) => 4,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Command::Config { preset: Preset::Small }) => ExperimentConfig::small(ExperimentConfig::default().seed),
        (None, _) => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let stage = match cli.command {
        Command::Config { .. } => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::All => None,
        Command::Generate => Some(Stage::Generate),
        Command::TrainAm => Some(Stage::TrainAm),
        Command::TrainMap => Some(Stage::TrainMap),
        Command::Analyze => Some(Stage::Analyze),
        Command::Fuse => Some(Stage::Fuse),
        Command::Report => Some(Stage::Report),
    };
    let pipeline = Pipeline::new(cfg, cli.jobs)?;
    match stage {
        Some(s) => {
            pipeline.run(s)?;
        }
        None => pipeline.run_all()?,
    }
    println!("{} (config {})", pipeline.root().display(), pipeline.config_hash());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
