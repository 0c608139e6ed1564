use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("stats error: {0}")]
    Stats(String),

    #[error("malformed cascade: {0}")]
    MalformedCascade(String),

    #[error("time violation: {0}")]
    TimeViolation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("schema overflow: {0}")]
    SchemaOverflow(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("value {value} outside [0, {upper})")]
    Range { value: f64, upper: f64 },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric instability: {0}")]
    Numeric(String),

    #[error("unknown node {0}")]
    Lookup(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("feature error: {0}")]
    Feature(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Split(_) => "split",
            Error::Stats(_) => "stats",
            Error::MalformedCascade(_) => "malformed_cascade",
            Error::TimeViolation(_) => "time_violation",
            Error::Schema(_) => "schema",
            Error::SchemaOverflow(_) => "schema_overflow",
            Error::SchemaMismatch(_) => "schema_mismatch",
            Error::Range { .. } => "range",
            Error::Shape { .. } => "shape",
            Error::Contract(_) => "contract",
            Error::Numeric(_) => "numeric_instability",
            Error::Lookup(_) => "lookup",
            Error::Evaluation(_) => "evaluation",
            Error::Feature(_) => "feature",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
