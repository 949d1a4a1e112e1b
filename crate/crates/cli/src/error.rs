use std::fmt;

use lapnerf::checkpoint::CheckpointError;
use lapnerf::colmap::ColmapError;
use lapnerf::dataset::PrepError;
use lapnerf::metrics::MetricsError;
use lapnerf::rays::RayError;
use lapnerf::train::TrainError;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_CORRUPT_CHECKPOINT: i32 = 4;
pub const EXIT_EMPTY_SPLIT: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn io_code(e: &std::io::Error) -> i32 {
    if e.kind() == std::io::ErrorKind::NotFound {
        EXIT_MISSING_INPUT
    } else {
        EXIT_FAILURE
    }
}

impl From<ColmapError> for CliError {
    fn from(e: ColmapError) -> Self {
        let code = match &e {
            ColmapError::MissingFile(_) => EXIT_MISSING_INPUT,
            ColmapError::Io(io) => io_code(io),
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<PrepError> for CliError {
    fn from(e: PrepError) -> Self {
        match e {
            PrepError::Colmap(c) => c.into(),
            PrepError::MissingFrameFile(_) => Self::new(EXIT_MISSING_INPUT, e.to_string()),
            PrepError::Io(ref io) => Self::new(io_code(io), e.to_string()),
            PrepError::Image(i) => i.into(),
            _ => Self::new(EXIT_FAILURE, e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let code = match &e {
            CheckpointError::Corrupt { .. } | CheckpointError::UnsupportedVersion { .. } | CheckpointError::Field(_) => {
                EXIT_CORRUPT_CHECKPOINT
            }
            CheckpointError::Io(io) => io_code(io),
        };
        Self::new(code, format!("checkpoint: {e}"))
    }
}

impl From<RayError> for CliError {
    fn from(e: RayError) -> Self {
        match e {
            RayError::EmptyTrainSet => Self::new(EXIT_EMPTY_SPLIT, "no train frames"),
            RayError::Dataset(d) => d.into(),
            RayError::Image(i) => i.into(),
            _ => Self::new(EXIT_FAILURE, e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::EmptySplit => Self::new(EXIT_EMPTY_SPLIT, "no eval frames"),
            MetricsError::Ray(r) => r.into(),
            MetricsError::Image(i) => i.into(),
            _ => Self::new(EXIT_FAILURE, e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergenceDetected { .. } => Self::new(EXIT_DIVERGED, e.to_string()),
            TrainError::Ray(r) => r.into(),
            _ => Self::new(EXIT_FAILURE, e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(io_code(&e), e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(EXIT_FAILURE, format!("json: {e}"))
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        match &e {
            image::ImageError::IoError(io) => Self::new(io_code(io), format!("image: {e}")),
            _ => Self::new(EXIT_FAILURE, format!("image: {e}")),
        }
    }
}
