use semloc_core::io::FormatError;
use semloc_core::matching::MatchError;
use semloc_core::pose::PoseError;
use semloc_core::LocalizeError;
use thiserror::Error;

/// Process exit codes; clap reports its own usage errors with 2.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const INSUFFICIENT_CANDIDATES: i32 = 4;
    pub const DEGENERATE_GEOMETRY: i32 = 5;
    pub const IO: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn from_format(path: &std::path::Path, e: FormatError) -> Self {
        match e {
            FormatError::Io { path, source } => CliError::Io(format!("{path}: {source}")),
            other => CliError::Parse { path: path.display().to_string(), message: other.to_string() },
        }
    }

    /// Machine-readable category printed with the message.
    pub fn category(&self) -> &'static str {
        match self.code() {
            exit::CONFIG => "config",
            exit::PARSE => "parse",
            exit::INSUFFICIENT_CANDIDATES => "insufficient-candidates",
            exit::DEGENERATE_GEOMETRY => "degenerate-geometry",
            exit::IO => "io",
            _ => "error",
        }
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Parse { .. } => exit::PARSE,
            CliError::Io(_) => exit::IO,
            CliError::Localize(LocalizeError::Match(MatchError::InsufficientCandidates { .. })) => exit::INSUFFICIENT_CANDIDATES,
            CliError::Localize(LocalizeError::Match(MatchError::DegenerateGeometry { .. }))
            | CliError::Localize(LocalizeError::Pose(PoseError::Degenerate(_))) => exit::DEGENERATE_GEOMETRY,
            CliError::Localize(LocalizeError::Descriptor(_) | LocalizeError::UnknownWeights(_) | LocalizeError::Match(MatchError::InvalidParameter(_))) => exit::CONFIG,
            CliError::Localize(_) | CliError::Other(_) => exit::OTHER,
        }
    }
}
