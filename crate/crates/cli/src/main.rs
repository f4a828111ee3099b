//! `simdist`: build datasets, train adapters, evaluate and report.

mod commands;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use simdist_core::{Error, LossKind, RunConfig, Variant};

/// Survey response distribution prediction pipeline.
#[derive(Debug, Parser)]
#[command(name = "simdist", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides `train.seed` and `eval.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the split dataset and print subset counts.
    BuildData {
        #[command(flatten)]
        common: Common,
    },
    /// Train an adapter on the train subset.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate zero-shot and fine-tuned predictors on the test subsets.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Subsets to evaluate, overriding `eval.subsets`.
        #[arg(long, value_delimiter = ',')]
        subsets: Option<Vec<String>>,
        /// Variants to evaluate (normal, ctrl, shuffled), overriding `eval.variants`.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
        /// Adapter checkpoint for the FT rows, overriding `eval.adapter`.
        #[arg(long)]
        adapter: Option<PathBuf>,
    },
    /// Evaluate the non-trained baselines.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Any of knn, avg_culture, json_zs, uniform.
        #[arg(long, value_delimiter = ',', default_value = "knn,avg_culture,json_zs")]
        predictors: Vec<commands::BaselineKind>,
        #[arg(long, value_delimiter = ',')]
        subsets: Option<Vec<String>>,
    },
    /// Train one adapter per loss and compare them.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "KL,JS,WA,CE")]
        losses: Vec<LossKind>,
        /// Also score every adapter on shuffled option orders.
        #[arg(long)]
        shuffled: bool,
    },
    /// Re-render report files from an existing results directory.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory holding results.csv and predictions.jsonl; `<output_dir>/eval` by default.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::BuildData { common }
            | Command::Train { common }
            | Command::Eval { common, .. }
            | Command::Baseline { common, .. }
            | Command::Ablate { common, .. }
            | Command::Report { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::BuildData { .. } => "build-data",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Baseline { .. } => "baseline",
            Command::Ablate { .. } => "ablate",
            Command::Report { .. } => "report",
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
    }
    Ok(cfg)
}

/// Copies log lines to stderr and the run's log file.
struct Tee(File);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        self.0.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        std::io::stderr().flush()?;
        self.0.flush()
    }
}

fn init_logging(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating log file {}", path.display()))?;
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .target(env_logger::Target::Pipe(Box::new(Tee(file))))
        .init();
    Ok(())
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::Config { .. })))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };

    let cfg = match load_config(cli.command.common()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };

    let log_path = cfg.output_dir.join("logs").join(format!("{}.log", cli.command.name()));
    if let Err(e) = init_logging(&log_path) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    if let Some(threads) = cfg.eval.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    match commands::run(&cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            if is_config_error(&e) {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}\nsee log: {}", log_path.display());
            ExitCode::from(1)
        }
    }
}
