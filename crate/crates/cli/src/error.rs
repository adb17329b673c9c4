use std::fmt;
use std::process::ExitCode;

use pcal::correction::LoopError;
use pcal::dataset::DatasetError;
use pcal::image::ImageError;
use pcal::regressor::{TrainError, WeightsFileError};

/// A failure mapped to the process exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input data.
    Invalid(String),
    Io(String),
    /// The run finished but missed its acceptance threshold.
    Gate(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
            CliError::Gate(_) => 3,
        })
    }

    pub fn invalid(msg: impl fmt::Display) -> Self {
        CliError::Invalid(msg.to_string())
    }

    pub fn io(msg: impl fmt::Display) -> Self {
        CliError::Io(msg.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Gate(m) => write!(f, "gate failed: {m}"),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match &e {
            DatasetError::Io { .. } => CliError::io(e),
            DatasetError::Image { source: ImageError::Io(_), .. } => CliError::io(e),
            _ => CliError::invalid(e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Dataset(d) => d.into(),
            TrainError::Image { source: ImageError::Io(_), .. } => CliError::io(e),
            e => CliError::invalid(e),
        }
    }
}

impl From<WeightsFileError> for CliError {
    fn from(e: WeightsFileError) -> Self {
        match e {
            WeightsFileError::Io(_) => CliError::io(e),
            WeightsFileError::Corrupt(_) => CliError::invalid(e),
        }
    }
}

impl From<LoopError> for CliError {
    fn from(e: LoopError) -> Self {
        match e {
            LoopError::Io { .. } => CliError::io(e),
            LoopError::Config(_) => CliError::invalid(e),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Io(_) => CliError::io(e),
            e => CliError::invalid(e),
        }
    }
}
