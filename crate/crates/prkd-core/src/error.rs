//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by the sensing, initialization, training, and reporting paths.
#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes do not agree with an operation's contract.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file (bad magic number, bad header).
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// File ended before the expected payload; `offset` is the byte position
    /// at which the read failed.
    #[error("truncated input at byte offset {offset}: {what}")]
    Truncated { offset: u64, what: String },

    /// Power iteration collapsed (e.g. all-zero measurements).
    #[error("degenerate initialization at iteration {iteration}: iterate norm below {threshold:e}")]
    DegenerateInit { iteration: usize, threshold: f64 },

    /// An input that must be nonzero was identically zero.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Teacher and student network descriptors differ.
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    /// Loss weights violate the affine constraint.
    #[error("invalid loss weights: {0}")]
    Weights(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Divergence { epoch: usize, batch: usize },

    /// A report was requested before all of its input runs completed.
    #[error("incomplete report, missing runs: {}", missing.join(", "))]
    IncompleteReport { missing: Vec<String> },

    /// Checkpoint container is malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Coarse class name used by the CLI for machine-parsable failure lines.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dim(_) => "dimension",
            Error::Config(_) | Error::Weights(_) => "config",
            Error::Format(_) => "format",
            Error::Io(_) | Error::Truncated { .. } => "io",
            Error::DegenerateInit { .. } | Error::Degenerate(_) => "degenerate",
            Error::ArchMismatch(_) => "architecture",
            Error::Divergence { .. } => "divergence",
            Error::IncompleteReport { .. } => "incomplete-report",
            Error::Checkpoint(_) => "checkpoint",
        }
    }

    /// Process exit code the CLI maps this error to (config errors 3, runtime 4).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Weights(_) | Error::Format(_) | Error::Dim(_) => 3,
            _ => 4,
        }
    }
}
