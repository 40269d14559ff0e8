use thiserror::Error;

/// Unified error type for the toolkit.
///
/// Variants map to failure classes surfaced by the public operations, so
/// callers (including the CLI) can branch on kind rather than message text.
#[derive(Debug, Error)]
pub enum Error {
    /// Input file or record does not match the configured schema.
    #[error("schema: {0}")]
    Schema(String),

    /// An operation received no usable data.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// An argument is outside its mathematical domain.
    #[error("domain: {0}")]
    Domain(String),

    /// Data is present but too short or too sparse for the operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A required named feature was not detected.
    #[error("feature missing: {0}")]
    FeatureMissing(String),

    /// Calibration could not produce a usable lookup table.
    #[error("calibration: {0}")]
    Calibration(String),

    /// Estimation had no usable inputs.
    #[error("estimation: {0}")]
    Estimation(String),

    /// Model training failed to make progress.
    #[error("training: {0}")]
    Training(String),

    /// A segment was rejected by a quality gate; carries the reasons.
    #[error("gated: {0}")]
    Gated(String),

    /// Numerical integration became unstable for the requested step size.
    #[error("integrator: {0}")]
    Integrator(String),

    /// Invalid or inconsistent configuration.
    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// A file parsed but its content is malformed.
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
