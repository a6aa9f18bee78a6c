use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the flow, the Galerkin solver and the checkpoint store.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite input: {0}")]
    Domain(String),

    #[error("degenerate time: elapsed time {0} must be strictly positive")]
    DegenerateTime(f64),

    #[error("assembly failed at sample {index}: {reason}")]
    Assembly { index: usize, reason: String },

    #[error("integration failed at tau = {tau}: step size {step} fell below the minimum (error estimate {error_norm})")]
    StepUnderflow {
        tau: f64,
        step: f64,
        error_norm: f64,
    },

    #[error("integration failed at tau = {tau}: {reason}")]
    Integration { tau: f64, reason: String },

    #[error("time {value} outside the valid range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("unsupported spatial dimension {0} (supported: 2..=6)")]
    UnsupportedDimension(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: truncated file ({0})")]
    Truncated(&'static str),

    #[error("checkpoint: checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },

    #[error("checkpoint: malformed header: {0}")]
    Header(String),

    #[error("checkpoint: configuration mismatch: {0}")]
    ConfigMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Range { .. } | Error::UnsupportedDimension(_) => 2,
            Error::Domain(_)
            | Error::DegenerateTime(_)
            | Error::Assembly { .. }
            | Error::StepUnderflow { .. }
            | Error::Integration { .. } => 3,
            Error::Io { .. }
            | Error::BadMagic
            | Error::VersionMismatch { .. }
            | Error::Truncated(_)
            | Error::Checksum { .. }
            | Error::Header(_)
            | Error::ConfigMismatch(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
