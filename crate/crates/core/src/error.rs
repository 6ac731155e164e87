use thiserror::Error;

pub type Result<T, E = RsanError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RsanError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("degenerate vector in {op}: zero norm operand")]
    DegenerateVector { op: &'static str },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("non-finite {term} loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        term: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("malformed file at byte {offset}: expected {expected}")]
    Format { offset: u64, expected: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RsanError {
    /// Stable lowercase tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            RsanError::Dimension { .. } => "dimension",
            RsanError::Domain { .. } => "domain",
            RsanError::DegenerateVector { .. } => "degenerate_vector",
            RsanError::NonFinite { .. } => "non_finite",
            RsanError::Usage(_) => "usage",
            RsanError::Config(_) => "config",
            RsanError::Data(_) => "data",
            RsanError::Contract { .. } => "contract",
            RsanError::NonFiniteLoss { .. } => "non_finite_loss",
            RsanError::Format { .. } => "format",
            RsanError::Io(_) => "io",
        }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        RsanError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
