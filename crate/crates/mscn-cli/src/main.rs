//! `mscn`: dataset synthesis, training, progressive domain expansion, and
//! evaluation for the structural convolution classifier.
//!
//! Exit codes: 0 on success, 1 for configuration or input validation
//! problems, 2 for runtime failures (I/O, divergence, numeric overflow).

mod commands;
mod config;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mscn_core::geometry::Transform;
use mscn_core::Error;

#[derive(Parser)]
#[command(name = "mscn", version, about = "Structural convolution network toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file; keys mirror the defaults shown in run.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single configuration key, e.g. --set epochs=5. Repeatable;
    /// wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> mscn_core::Result<config::RunConfig> {
        config::resolve(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled train/test corpus.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (train/ and test/ are created inside).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on a dataset manifest.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Path to the dataset manifest.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Progressive unseen-domain expansion from a pretrained checkpoint.
    ExpandTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Pretrained classifier checkpoint directory.
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint, optionally under one perturbation.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rotate about the vertical axis by this many degrees.
        #[arg(long, conflicts_with_all = ["shift", "scale"])]
        rotate: Option<f64>,
        /// Apply a random rigid shift with this radius.
        #[arg(long, conflicts_with = "scale")]
        shift: Option<f64>,
        /// Scale uniformly by this factor.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Accuracy over a perturbation grid (rotation, shift or scale).
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Grid kind: rotation, shift or scale.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint at full and reduced test-set resolutions.
    CrossRes {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a metrics CSV as an SVG line plot.
    ExportPlots {
        /// Input metrics CSV.
        #[arg(long)]
        csv: PathBuf,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "accuracy")]
        title: String,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Validation(_)
        | Error::Parse { .. }
        | Error::DimMismatch { .. }
        | Error::InvalidScale(_)
        | Error::InsufficientPoints { .. }
        | Error::InvalidCoordinates { .. }
        | Error::InsufficientAfterSampling { .. }
        | Error::DecimationEmpty
        | Error::FeatureRowMismatch { .. }
        | Error::MissingCheckpoint(_)
        | Error::Checkpoint(_) => 1,
        Error::NumericOverflow(_) | Error::Divergence(_) | Error::Io { .. } | Error::Json(_) => 2,
    }
}

fn run(cli: Cli) -> mscn_core::Result<()> {
    match cli.command {
        Command::GenData { cfg, out } => commands::gen_data(&cfg.resolve()?, &out),
        Command::Train { cfg, data, out } => commands::train(&cfg.resolve()?, &data, &out),
        Command::ExpandTrain {
            cfg,
            data,
            pretrained,
            out,
        } => commands::expand_train(&cfg.resolve()?, &data, &pretrained, &out),
        Command::Eval {
            cfg,
            checkpoint,
            data,
            out,
            rotate,
            shift,
            scale,
        } => {
            let config = cfg.resolve()?;
            let perturb = match (rotate, shift, scale) {
                (Some(degrees), _, _) => Some(Transform::RotateZ { degrees }),
                (_, Some(dmax), _) => Some(Transform::ShiftRandom {
                    dmax,
                    seed: config.seed,
                }),
                (_, _, Some(s)) => Some(Transform::Scale { s }),
                _ => None,
            };
            commands::eval(&config, &checkpoint, &data, perturb, &out)
        }
        Command::Sweep {
            cfg,
            checkpoint,
            data,
            kind,
            out,
        } => commands::sweep(&cfg.resolve()?, &checkpoint, &data, &kind, &out),
        Command::CrossRes {
            cfg,
            checkpoint,
            data,
            out,
        } => commands::cross_res(&cfg.resolve()?, &checkpoint, &data, &out),
        Command::ExportPlots { csv, out, title } => commands::export_plots(&csv, &out, &title),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits; real argument
            // errors count as validation failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
