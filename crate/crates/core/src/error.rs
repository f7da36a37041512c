use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MintError>;

#[derive(Debug, Error)]
pub enum MintError {
    #[error("no samples")]
    NoSamples,

    #[error("label out of range: {label} >= {n_classes}")]
    LabelOutOfRange { label: i64, n_classes: usize },

    #[error("degenerate series: zero variance")]
    DegenerateSeries,

    #[error("degenerate weights: normalizing factor is zero")]
    DegenerateWeights,

    #[error("annihilated sample {index}: reweighted norm {norm:e} below floor")]
    AnnihilatedSample { index: usize, norm: f64 },

    #[error("degenerate adjusted text for class {class}")]
    DegenerateAdjustedText { class: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("undefined objective: {0}")]
    UndefinedObjective(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("not a mint dump: {}", path.display())]
    NotADump { path: PathBuf },

    #[error("unsupported dump version {found} in {} (expected {expected})", path.display())]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("truncated at byte {at} in {} (expected {expected} bytes)", path.display())]
    Truncated {
        path: PathBuf,
        at: u64,
        expected: u64,
    },

    #[error("malformed dump {}: {reason}", path.display())]
    MalformedDump { path: PathBuf, reason: String },

    #[error("row {row} is not normalized (norm {norm})")]
    NonNormalizedRow { row: usize, norm: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl MintError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MintError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MintError::InvalidParams(msg.into())
    }
}
