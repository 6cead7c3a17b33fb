use thiserror::Error;

/// Errors raised by panel ingestion, the estimators and the benchmark harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("incomplete panel: {0}")]
    IncompletePanel(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("duplicate cell for unit `{unit}` and period `{period}`")]
    DuplicateCell { unit: String, period: String },
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("insufficient units: {0}")]
    InsufficientUnits(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("mixing parameter must be positive to define a zeroing penalty")]
    Mixing,
    #[error("fold error: {0}")]
    Fold(String),
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),
    #[error("invalid mask: {0}")]
    Mask(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ensemble error: {0}")]
    Ensemble(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::IncompletePanel(_) => "IncompletePanel",
            Error::Parse(_) => "ParseError",
            Error::DuplicateCell { .. } => "DuplicateCell",
            Error::InvalidPanel(_) => "InvalidPanel",
            Error::Domain(_) => "DomainError",
            Error::InsufficientHistory(_) => "InsufficientHistory",
            Error::InsufficientUnits(_) => "InsufficientUnits",
            Error::Numerical(_) => "NumericalError",
            Error::Mixing => "MixingError",
            Error::Fold(_) => "FoldError",
            Error::DegenerateMask(_) => "DegenerateMask",
            Error::Mask(_) => "MaskError",
            Error::Config(_) => "ConfigError",
            Error::Ensemble(_) => "EnsembleError",
            Error::UnknownMethod(_) => "UnknownMethod",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
