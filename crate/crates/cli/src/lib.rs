//! `deeppco` command line: encode scans, prepare datasets, generate synthetic
//! sequences, train, infer and evaluate.
//!
//! Exit codes: 0 ok, 1 other failure, 2 I/O, 3 malformed input or config,
//! 4 non-finite loss, 5 checkpoint/config mismatch.

pub mod commands;
pub mod error;
pub mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{MotionKind, ReportFormat, TrainData};
pub use error::{exit, CliError};
use settings::{Heads, Mode, Overrides, Profile, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "deeppco",
    version,
    about = "Lidar odometry from panoramic depth images"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Projection and network size pair.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Config override, repeatable; wins over the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Project Velodyne scans to depth images (PGM) plus JSON-lines stats.
    Encode {
        /// A `.bin` scan or a directory of them.
        #[arg(long)]
        input: PathBuf,
    },
    /// Validate a KITTI-layout dataset and write relative-pose labels.
    Prep {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated sequence names; all sequences when omitted.
        #[arg(long, value_delimiter = ',')]
        sequences: Vec<String>,
    },
    /// Write synthetic sequences in the KITTI layout.
    Synth {
        #[arg(long, value_delimiter = ',', default_value = "00")]
        sequences: Vec<String>,
        #[arg(long, default_value_t = 201)]
        frames: usize,
        #[arg(long, value_enum, default_value_t = MotionKind::Uniform)]
        motion: MotionKind,
    },
    /// Train on a dataset or on freshly generated synthetic pairs.
    Train {
        #[arg(long, conflicts_with = "synth")]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        sequences: Vec<String>,
        /// Number of in-memory synthetic training pairs.
        #[arg(long)]
        synth: Option<usize>,
        #[command(flatten)]
        arch: ArchArgs,
        /// Continue from a training checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
    },
    /// Predict relative poses for a sequence and integrate a trajectory.
    Infer {
        #[arg(long, value_name = "CKPT")]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sequence: String,
        #[command(flatten)]
        arch: ArchArgs,
    },
    /// RMSE and drift of a predicted trajectory against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Row label; defaults to the ground-truth file stem.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
}

#[derive(Debug, Args, Clone, Copy)]
pub struct ArchArgs {
    /// Which sub-networks to build.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// FC head layout.
    #[arg(long, value_enum)]
    pub heads: Option<Heads>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Encode { .. } => "encode",
            Command::Prep { .. } => "prep",
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
        }
    }

    fn arch(&self) -> Option<ArchArgs> {
        match self {
            Command::Train { arch, .. } | Command::Infer { arch, .. } => Some(*arch),
            _ => None,
        }
    }
}

fn require_out(out: &Option<PathBuf>, command: &str) -> Result<PathBuf, CliError> {
    out.clone()
        .ok_or_else(|| CliError::Usage(format!("{command} needs --out DIR")))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let arch = cli.command.arch();
    let ov = Overrides {
        seed: cli.common.seed,
        profile: cli.common.profile,
        mode: arch.and_then(|a| a.mode),
        heads: arch.and_then(|a| a.heads),
        set: cli.common.set.clone(),
    };
    let settings = Settings::resolve(cli.common.config.as_deref(), &ov)?;
    eprint!("{}", settings.header(cli.command.name()));
    let out = &cli.common.out;
    match &cli.command {
        Command::Encode { input } => {
            let n = commands::encode(&settings, input, &require_out(out, "encode")?)?;
            eprintln!("encoded {n} scans");
        }
        Command::Prep { data, sequences } => {
            commands::prep(&settings, data, sequences, &require_out(out, "prep")?)?
        }
        Command::Synth {
            sequences,
            frames,
            motion,
        } => commands::synth(
            &settings,
            sequences,
            *frames,
            *motion,
            &require_out(out, "synth")?,
        )?,
        Command::Train {
            data,
            sequences,
            synth,
            resume,
            ..
        } => {
            let source = match (data, synth) {
                (Some(root), None) => TrainData::Dataset { root, sequences },
                (None, Some(pairs)) => TrainData::Synthetic { pairs: *pairs },
                _ => {
                    return Err(CliError::Usage(
                        "train needs --data DIR or --synth N".into(),
                    ))
                }
            };
            commands::train_cmd(
                &settings,
                source,
                resume.as_deref(),
                &require_out(out, "train")?,
            )?;
        }
        Command::Infer {
            model,
            data,
            sequence,
            ..
        } => {
            commands::infer(
                &settings,
                model,
                data,
                sequence,
                &require_out(out, "infer")?,
            )?;
        }
        Command::Eval {
            pred,
            gt,
            name,
            format,
        } => {
            let report = commands::eval_cmd(pred, gt, name.as_deref(), *format, out.as_deref())?;
            print!("{report}");
        }
    }
    commands::flush_stdout();
    Ok(())
}
