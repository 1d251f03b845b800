//! Command-line front end: `heartsiam synth|prepare|train|evaluate|predict`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{cmd_evaluate, cmd_predict, cmd_prepare, cmd_synth, cmd_train};
pub use config::{extract_overrides, PipelineConfig};

use crate::dataset_io::Domain;
use crate::error::{Error, Result};

const OVERRIDE_HELP: &str = "Any config key can be overridden with a dotted flag, e.g. `--training.epochs 5`.";

const SYNTH_KEYS: &str = "Config keys read:
  seed, synth.domains, synth.n_per_class, synth.cell_counts, synth.duration_s,
  synth.profiles, synth.seed, paths.manifest (default output directory)";

const PREPARE_KEYS: &str = "Config keys read:
  paths.manifest, paths.cache_dir, processing.fs, processing.band_edges,
  processing.spike.window_s, processing.spike.threshold, segmentation.feature_rate,
  segmentation.durations.*, segmentation.cycle.*, segmentation.annotations, seed";

const TRAIN_KEYS: &str = "Config keys read:
  paths.manifest, paths.cache_dir, paths.output_dir, sampler.anchor_domains,
  sampler.partner_domains, sampler.n_blocks, sampler.seed, training.arch.*,
  training.alpha, training.lr, training.epochs, training.batch, training.seed,
  classifier.k, classifier.per_class, classifier.seed, seed";

const EVALUATE_KEYS: &str = "Config keys read:
  paths.cache_dir, paths.output_dir, sampler.anchor_domains, processing.fs,
  processing.band_edges, processing.spike.*, segmentation.feature_rate,
  segmentation.durations.*, segmentation.cycle.*, classifier.threshold";

const PREDICT_KEYS: &str = EVALUATE_KEYS;

#[derive(Debug, Parser)]
#[command(name = "heartsiam", version, about = "Domain-invariant normal/abnormal heart-sound classification", after_help = OVERRIDE_HELP)]
pub struct Cli {
    /// JSON config file; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-domain dataset.
    #[command(after_help = SYNTH_KEYS)]
    Synth {
        /// Output directory (default: the directory of paths.manifest).
        out_dir: Option<PathBuf>,
    },
    /// Segment every manifest record and write the cycle caches.
    #[command(after_help = PREPARE_KEYS)]
    Prepare,
    /// Train one branch per anchor domain and store KNN references.
    #[command(after_help = TRAIN_KEYS)]
    Train,
    /// Score a labelled manifest and write metrics.
    #[command(after_help = EVALUATE_KEYS)]
    Evaluate {
        manifest: PathBuf,
    },
    /// Score a single WAV file.
    #[command(after_help = PREDICT_KEYS)]
    Predict {
        wav: PathBuf,
        /// Domain tag attached to the record.
        #[arg(long, default_value = "a")]
        domain: Domain,
    },
}

/// Loads the config, applies `--seed` and dotted overrides, and validates.
pub fn resolve_config(cli: &Cli, overrides: &[(String, String)]) -> Result<PipelineConfig> {
    let base = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut cfg = base.with_overrides(overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_command(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    match &cli.command {
        Command::Synth { out_dir } => {
            let dir = out_dir
                .clone()
                .unwrap_or_else(|| cfg.paths.manifest.parent().map(PathBuf::from).unwrap_or_default());
            cmd_synth(cfg, &dir).map(|_| ())
        }
        Command::Prepare => cmd_prepare(cfg).map(|_| ()),
        Command::Train => cmd_train(cfg),
        Command::Evaluate { manifest } => cmd_evaluate(cfg, manifest).map(|_| ()),
        Command::Predict { wav, domain } => cmd_predict(cfg, wav, *domain).map(|_| ()),
    }
}

/// Full entry point over raw arguments; returns the process exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let (rest, overrides) = match extract_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = resolve_config(&cli, &overrides).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
        pool.install(|| run_command(&cli, &cfg))
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
