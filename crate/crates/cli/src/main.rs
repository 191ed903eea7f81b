//! `fedguard` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedguard_core::defense::{read_checkpoint, write_checkpoint};
use fedguard_core::sim::{csv_file_name, run_sweep, CsvReport};
use fedguard_core::{AggregatorKind, Error, Experiment, ExperimentConfig, OfflineArtifacts, Result};

#[derive(Parser)]
#[command(name = "fedguard", version, about = "Federated-learning simulator with Byzantine filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train shadow models and the defense model, and save them as a checkpoint.
    Offline(Common),
    /// Run one experiment and write its CSV.
    Run(RunArgs),
    /// Run one experiment per Byzantine fraction in the config's sweep grid.
    Sweep(RunArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Aggregation rule: fedavg, median, bulyan, lfr, fltrust or fedguard.
    #[arg(long)]
    aggregator: Option<AggregatorKind>,
    /// Fraction of Byzantine clients.
    #[arg(long)]
    byz_fraction: Option<f64>,
    /// Dirichlet concentration.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Defense checkpoint from `offline`; rebuilt when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

const CHECKPOINT_NAME: &str = "defense.ckpt";

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.rng_seed = seed;
        }
        if let Some(kind) = self.aggregator {
            cfg.aggregator = kind;
        }
        if let Some(f) = self.byz_fraction {
            cfg.byz_fraction = f;
        }
        if let Some(alpha) = self.alpha {
            cfg.partition.alpha = alpha;
        }
        cfg.validate()?;
        fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })?;
        Ok(cfg)
    }
}

fn load_artifacts(path: &Path, exp: &Experiment) -> Result<OfflineArtifacts> {
    let (arch, art) = read_checkpoint(path)?;
    if &arch != exp.network().arch() {
        return Err(Error::Config(format!(
            "checkpoint {} was built for `{arch}`, the config describes `{}`",
            path.display(),
            exp.network().arch()
        )));
    }
    Ok(art)
}

fn artifacts_for(args: &RunArgs, cfg: &ExperimentConfig, exp: &Experiment) -> Result<Option<OfflineArtifacts>> {
    if cfg.aggregator != AggregatorKind::FedGuard {
        return Ok(None);
    }
    match &args.checkpoint {
        Some(path) => load_artifacts(path, exp).map(Some),
        None => exp.offline().map(Some),
    }
}

fn offline(args: &Common) -> Result<()> {
    let cfg = args.load()?;
    let exp = Experiment::prepare(&cfg)?;
    let art = exp.offline()?;
    let path = args.out.join(CHECKPOINT_NAME);
    write_checkpoint(&path, exp.network().arch(), &art)?;
    println!(
        "defense model: training accuracy {:.4} on {} shadow models, written to {}",
        art.defense.accuracy(&art.samples),
        art.samples.len(),
        path.display()
    );
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let exp = Experiment::prepare(&cfg)?;
    let art = artifacts_for(args, &cfg, &exp)?;
    let alpha = cfg.partition.effective_alpha();
    let path = args.common.out.join(csv_file_name(cfg.aggregator, cfg.byz_fraction, alpha));
    let mut csv = CsvReport::create(&path, cfg.aggregator, cfg.byz_fraction, alpha)?;
    let report = exp.run(art.as_ref(), Some(&mut csv))?;
    println!(
        "{}: final accuracy {:.4}, AER {:.4}, written to {}",
        cfg.aggregator,
        report.final_accuracy,
        report.aer,
        path.display()
    );
    Ok(())
}

fn sweep(args: &RunArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let art = match (&args.checkpoint, cfg.aggregator) {
        (Some(path), AggregatorKind::FedGuard) => Some(load_artifacts(path, &Experiment::prepare(&cfg)?)?),
        _ => None,
    };
    for report in run_sweep(&cfg, art.as_ref(), &args.common.out)? {
        println!(
            "{} byz_fraction {}: final accuracy {:.4}, AER {:.4}",
            report.aggregator, report.byz_fraction, report.final_accuracy, report.aer
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Offline(args) => offline(args),
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
