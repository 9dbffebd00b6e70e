//! File formats and the command-line front end for `actseq-core`.
//!
//! Every format here is line-oriented text. Floats are written as the
//! shortest decimal that parses back to the same bits, so datasets,
//! checkpoints and reports round-trip exactly and identical runs produce
//! identical bytes.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod external;
pub mod report;
pub mod text;

use std::path::{Path, PathBuf};

pub use text::ParseError;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] actseq_core::Error),
}

impl FormatError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, source: ParseError) -> Self {
        Self::Parse { path: path.to_path_buf(), source }
    }
}
