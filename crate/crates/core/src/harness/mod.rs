//! Synthetic corpus generation, record files and the end-to-end pipeline
//! behind the `hoi` command-line tool.

pub mod io;
pub mod pipeline;
pub mod sim;

use std::path::Path;

use thiserror::Error;

use crate::assignment::AssignmentError;
use crate::distillation::DistillError;
use crate::evaluation::EvalError;
use crate::geometry::GeometryError;
use crate::losses::LossError;
use crate::matching::MatchError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HOI_OUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}: expected schema {expected}, found {got}")]
    Schema { file: String, expected: String, got: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("inconsistent inputs: {0}")]
    Inputs(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }
}
