mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::infer::InferArgs;
use commands::train::Stage;
use commands::Subset;
use config::{Overrides, RunConfig};
use error::ErrorRecord;

#[derive(Parser)]
#[command(name = "lesion-cascade", version, about = "Two-stage lesion detection on synthetic endoscopy frames")]
struct Cli {
    /// JSON config; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Match threshold for both evaluation and training targets.
    #[arg(long, global = true)]
    iou_thresh: Option<f64>,
    /// Minimum detection score kept at inference.
    #[arg(long, global = true)]
    score_thresh: Option<f64>,
    /// Output directory; each command has its own default under `out/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and the patient split.
    GenData,
    /// Train the detector or the recognition network.
    Train {
        #[arg(long, value_enum)]
        stage: Stage,
        /// Dataset directory written by gen-data.
        #[arg(long, default_value = "out/data")]
        data: PathBuf,
        /// Detector checkpoint whose backbone seeds the recognizer.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Run detection-only, cascade or oracle inference and write detections.jsonl.
    Infer {
        #[arg(long, default_value = "out/data")]
        data: PathBuf,
        #[arg(long)]
        detector: Option<PathBuf>,
        /// Adds the cascade pipeline next to detection-only.
        #[arg(long)]
        recognizer: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        subset: Subset,
        /// Replay ground truth as a reference pipeline.
        #[arg(long)]
        oracle: bool,
        /// Write annotated PNGs per pipeline and frame.
        #[arg(long)]
        overlays: bool,
    },
    /// Score a detections file against a dataset and write the report.
    Eval {
        #[arg(long, default_value = "out/infer/detections.jsonl")]
        detections: PathBuf,
        #[arg(long, default_value = "out/data")]
        data: PathBuf,
    },
    /// Recompute the published tables from their confusion matrices.
    ReproTables,
}

impl Command {
    fn default_out(&self) -> PathBuf {
        let name = match self {
            Command::GenData => "data".to_string(),
            Command::Train { stage: Stage::Detect, .. } => "train-detect".into(),
            Command::Train { stage: Stage::Recognize, .. } => "train-recognize".into(),
            Command::Infer { .. } => "infer".into(),
            Command::Eval { .. } => "eval".into(),
            Command::ReproTables => "repro-tables".into(),
        };
        Path::new("out").join(name)
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        iou_thresh: cli.iou_thresh,
        score_thresh: cli.score_thresh,
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cli.out.clone().unwrap_or_else(|| cli.command.default_out());
    let manifest = match &cli.command {
        Command::GenData => commands::gen_data::run(&cfg, &out)?,
        Command::Train { stage, data, init } => commands::train::run(&cfg, *stage, data, init.as_deref(), &out)?,
        Command::Infer { data, detector, recognizer, subset, oracle, overlays } => {
            let args = InferArgs {
                data,
                detector: detector.as_deref(),
                recognizer: recognizer.as_deref(),
                subset: *subset,
                oracle: *oracle,
                overlays: *overlays,
            };
            commands::infer::run(&cfg, &args, &out)?
        }
        Command::Eval { detections, data } => commands::eval::run(&cfg, detections, data, &out)?,
        Command::ReproTables => commands::repro::run(&cfg, &out)?,
    };
    log::info!("{}: {} artifacts in {}", manifest.command, manifest.artifacts.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = ErrorRecord::new(&err);
            eprintln!("{}", serde_json::to_string(&record).unwrap_or_else(|_| err.to_string()));
            ExitCode::from(record.exit_code)
        }
    }
}
