//! Experiment runner: config parsing, dataset ingestion, seeded runs and
//! sweeps, CSV logging, and post-processing. This is the library side of the
//! `tngd` binary.

pub mod config;
pub mod dataset;
pub mod postprocess;
pub mod runner;

use crate::curvature::CurvatureError;
use crate::optim::OptimError;
use std::path::PathBuf;
use thiserror::Error;

/// Environment variable naming the root under which relative output
/// directories are created.
pub const OUTPUT_ROOT_ENV: &str = "TNGD_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(#[from] dataset::DatasetError),
    #[error("malformed log {path}: {reason}")]
    MalformedLog { path: PathBuf, reason: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
}

impl BenchError {
    /// CLI exit code: 1 for configuration problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> BenchError {
        let path = path.into();
        move |source| BenchError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
