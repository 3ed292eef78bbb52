use std::io;
use std::path::{Path, PathBuf};

use deeppco::encoding::EncodeError;
use deeppco::eval::EvalError;
use deeppco::kitti::KittiError;
use deeppco::network::NetworkError;
use deeppco::pose::PoseError;
use deeppco::synthetic::SyntheticError;
use deeppco::trainer::TrainError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const IO: u8 = 2;
    pub const FORMAT: u8 = 3;
    pub const NUMERIC: u8 = 4;
    pub const COMPATIBILITY: u8 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Kitti(#[from] KittiError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => exit::IO,
            CliError::Usage(_)
            | CliError::Format { .. }
            | CliError::Encode(_)
            | CliError::Pose(_) => exit::FORMAT,
            CliError::Kitti(e) => kitti_code(e),
            CliError::Network(e) => network_code(e),
            CliError::Train(e) => match e {
                TrainError::NonFiniteLoss(_) => exit::NUMERIC,
                TrainError::Io { .. } => exit::IO,
                TrainError::Network(n) => network_code(n),
                TrainError::Eval(e) => eval_code(e),
                TrainError::Config { .. }
                | TrainError::InvalidConfig(_)
                | TrainError::ShapeMismatch(_) => exit::FORMAT,
                TrainError::EmptyDataset => exit::FAILURE,
            },
            CliError::Eval(e) => eval_code(e),
            CliError::Synthetic(e) => match e {
                SyntheticError::Kitti(k) => kitti_code(k),
                SyntheticError::InvalidScene(_) | SyntheticError::InvalidMotion(_) => exit::FORMAT,
                SyntheticError::DegenerateScene(_) | SyntheticError::TooFewFrames(_) => {
                    exit::FAILURE
                }
            },
        }
    }
}

fn kitti_code(e: &KittiError) -> u8 {
    if e.is_io() {
        exit::IO
    } else {
        exit::FORMAT
    }
}

fn network_code(e: &NetworkError) -> u8 {
    match e {
        NetworkError::DigestMismatch { .. } => exit::COMPATIBILITY,
        NetworkError::Io(_) => exit::IO,
        _ => exit::FORMAT,
    }
}

fn eval_code(e: &EvalError) -> u8 {
    match e {
        EvalError::Io { .. } => exit::IO,
        _ => exit::FORMAT,
    }
}
