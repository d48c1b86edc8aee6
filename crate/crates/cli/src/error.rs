use std::path::{Path, PathBuf};

use pixfas::em_model::EmModelError;
use pixfas::impm::ImpmError;
use pixfas::pcdm::PcdmError;
use pixfas::search::{SearchError, Step1Stats};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_NO_SOLUTION: u8 = 5;
pub const EXIT_ORACLE: u8 = 6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("no matched set found ({0})")]
    NoSolution(Step1Stats),
    #[error("oracle failure: {0}")]
    Oracle(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Input(_) => EXIT_IO,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::NoSolution(_) => EXIT_NO_SOLUTION,
            CliError::Oracle(_) => EXIT_ORACLE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<EmModelError> for CliError {
    fn from(e: EmModelError) -> Self {
        match e {
            EmModelError::Numerics(_) => CliError::Numeric(e.to_string()),
            EmModelError::Invalid(_) => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ImpmError> for CliError {
    fn from(e: ImpmError) -> Self {
        match e {
            ImpmError::InvalidConfig(_) | ImpmError::InvalidCircuit(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<PcdmError> for CliError {
    fn from(e: PcdmError) -> Self {
        match e {
            PcdmError::GridMismatch(_) => CliError::Input(e.to_string()),
            PcdmError::InvalidTarget(_) | PcdmError::InvalidOrdering(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Exhausted(stats) => CliError::NoSolution(stats),
            SearchError::Impm(e) => e.into(),
            SearchError::Pcdm(e) => e.into(),
            SearchError::Invalid(_) | SearchError::TooFewStates { .. } | SearchError::CapExceeded { .. } => {
                CliError::Config(e.to_string())
            }
        }
    }
}
