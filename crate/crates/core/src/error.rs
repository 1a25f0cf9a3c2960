use std::path::PathBuf;

use thiserror::Error;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or corrupt input files, schema mismatches.
    Format,
    /// Input is well formed but numerically degenerate or non-finite.
    Degenerate,
    /// Invalid parameters or configuration.
    Usage,
    /// Filesystem failures.
    Io,
    /// Internal numeric failures (non-convergence).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("corrupt trial file {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("non-finite value at row {row}, channel {channel}")]
    NonFinite { row: usize, channel: usize },

    #[error("invalid trial: {0}")]
    InvalidTrial(String),

    #[error("degenerate channel {channel}: standard deviation {sd:e} is not above 1e-12")]
    DegenerateChannel { channel: usize, sd: f64 },

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("channel {channel}: {source}")]
    Channel {
        channel: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trial {trial_id}: {source}")]
    Trial {
        trial_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate pool: {0}")]
    DegeneratePool(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("undefined phase: {0}")]
    UndefinedPhase(String),

    #[error("signal too short: need more than {min} samples, got {len}")]
    Length { len: usize, min: usize },

    #[error("filter design: {0}")]
    Design(String),

    #[error("arity: {0}")]
    Arity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metadata: {0}")]
    Metadata(String),

    #[error("generation: {0}")]
    Generation(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Format { .. } | Error::Corruption { .. } | Error::Metadata(_) => ErrorClass::Format,
            Error::NonFinite { .. }
            | Error::InvalidTrial(_)
            | Error::DegenerateChannel { .. }
            | Error::DegenerateSignal(_)
            | Error::DegeneratePool(_)
            | Error::DegenerateSample(_)
            | Error::UndefinedPhase(_)
            | Error::Length { .. } => ErrorClass::Degenerate,
            Error::Channel { source, .. } | Error::Trial { source, .. } => source.class(),
            Error::Design(_) | Error::Arity(_) | Error::Config(_) | Error::Generation(_) => {
                ErrorClass::Usage
            }
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::Io { .. } => ErrorClass::Io,
        }
    }

    /// Short machine-readable tag for the innermost error.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format { .. } => "format",
            Error::Corruption { .. } => "corruption",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidTrial(_) => "invalid_trial",
            Error::DegenerateChannel { .. } => "degenerate_channel",
            Error::DegenerateSignal(_) => "degenerate_signal",
            Error::Channel { source, .. } | Error::Trial { source, .. } => source.kind(),
            Error::DegeneratePool(_) => "degenerate_pool",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::UndefinedPhase(_) => "undefined_phase",
            Error::Length { .. } => "length",
            Error::Design(_) => "design",
            Error::Arity(_) => "arity",
            Error::Config(_) => "config",
            Error::Metadata(_) => "metadata",
            Error::Generation(_) => "generation",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn in_channel(self, channel: usize) -> Error {
        Error::Channel {
            channel,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_trial(self, trial_id: &str) -> Error {
        Error::Trial {
            trial_id: trial_id.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
