use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix contains a non-finite entry")]
    NonFinite,

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("adjacent eigenvalue groups {left} and {right} share a value (zero spectral gap)")]
    DegenerateGap { left: usize, right: usize },

    #[error("bad eigenvalue grouping: {0}")]
    BadGrouping(String),

    #[error("selection covers the whole spectrum, no exterior gap")]
    NoExteriorGap,

    #[error("bad eigenspace selection {s_minus}..={s_plus} for {groups} groups")]
    BadSelection {
        s_minus: usize,
        s_plus: usize,
        groups: usize,
    },

    #[error("degrees of freedom {dof} too small for dimension {dim}")]
    BadDegreesOfFreedom { dof: f64, dim: usize },

    #[error("rejection sampler starved: acceptance rate {acceptance:e}")]
    RejectionStarved { acceptance: f64 },

    #[error("prior density exceeds the supplied envelope in the vicinity")]
    EnvelopeViolated,

    #[error("functional has a zero normalizer")]
    DegenerateFunctional,

    #[error("projector budget normalizer vanishes")]
    DegenerateNormalizer,

    #[error("prior density is zero at the true covariance, flatness undefined")]
    UndefinedFlatness,

    #[error("bad dimension: {0}")]
    BadDimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
