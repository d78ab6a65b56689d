use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("point {point:?} lies outside the domain")]
    PointOutOfDomain { point: Vec<f64> },
    #[error("supports differ: {0} vs {1} states")]
    SupportMismatch(usize, usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("sample clouds differ in size or dimension: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("histogram grid does not match the environment grid")]
    GridMismatch,
    #[error("invalid discrete action {action} (only {count} actions)")]
    InvalidDiscreteAction { action: usize, count: usize },
    #[error("decision rule row {row} sums to {sum}")]
    RowNotNormalized { row: usize, sum: f64 },
    #[error("action mesh of {size} entries exceeds the cap {cap}")]
    MeshTooLarge { size: u128, cap: u128 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite network input")]
    NonFiniteInput,
    #[error("tape does not match the network")]
    TapeMismatch,
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveStd(f64),
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("non-finite log-probability")]
    NonFiniteLogProb,
    #[error("non-finite loss; update aborted")]
    NonFiniteLoss,
    #[error("non-finite mean-field gap")]
    NonFiniteGap,
    #[error("gradient has zero norm")]
    ZeroGradientNorm,
    #[error("checkpoint was trained on `{checkpoint}` but `{requested}` was requested")]
    CheckpointEnvMismatch { checkpoint: String, requested: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid checkpoint or dump: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
