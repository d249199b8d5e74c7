use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use copdnet_cli::{
    cmd_calibrate, cmd_cv, cmd_features, cmd_index, cmd_predict, cmd_segment, cmd_train, Result, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "copdnet",
    version,
    about = "COPD detection from respiratory sound recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the dataset and write the manifest.
    Index(Common),
    /// Compute and cache features for the train and test splits.
    Features(Common),
    /// Write detected breathing-cycle boundaries.
    Segment(Common),
    /// Fit segmentation offsets against the annotations.
    Calibrate(Common),
    /// Train on the train split and evaluate on the test split.
    Train(Common),
    /// Cross-validate on the train split.
    Cv(Common),
    /// Classify a single WAV file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        wav: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok());
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let log = &mut std::io::stderr();
    match cli.command {
        Command::Index(c) => cmd_index(&load_config(&c)?, log).map(|_| true),
        Command::Features(c) => {
            let summary = cmd_features(&load_config(&c)?, log)?;
            for (key, err) in &summary.failed {
                eprintln!("FAILED {key}: {err}");
            }
            Ok(summary.ok())
        }
        Command::Segment(c) => cmd_segment(&load_config(&c)?, log).map(|_| true),
        Command::Calibrate(c) => cmd_calibrate(&load_config(&c)?, log).map(|_| true),
        Command::Train(c) => cmd_train(&load_config(&c)?, log).map(|_| true),
        Command::Cv(c) => cmd_cv(&load_config(&c)?, log).map(|_| true),
        Command::Predict { common, model, wav } => {
            let p = cmd_predict(&load_config(&common)?, &model, &wav)?;
            println!("{}", serde_json::to_string(&p).expect("prediction serializes"));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
