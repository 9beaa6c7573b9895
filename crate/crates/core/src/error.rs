use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("negative entry in {what}: {value}")]
    NegativeEntry { what: &'static str, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A cell needed by a log-ratio formula has zero mass.
    #[error("zero mass in cell ({x}, {y}); enable the pseudo-count to smooth")]
    ZeroCell { x: String, y: String },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("step size collapsed to {step:e} after repeated divergence (residual {residual:e})")]
    StepSize { step: f64, residual: f64 },

    #[error("market size {size} exceeds the cap of {cap}")]
    SizeAboveCap { size: usize, cap: usize },

    #[error("basis matrices are linearly dependent (rank {rank} < {k})")]
    RankDeficient { rank: usize, k: usize },

    #[error("singular Hessian: {0}")]
    Singular(String),

    #[error("quadruple set is empty")]
    EmptyQuadruples,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("duplicate cell ({x}, {y})")]
    DuplicateCell { x: String, y: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
