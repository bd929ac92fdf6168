use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid value for `{key}`: {reason}")]
    Range { key: String, reason: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("fields live on different grids or layouts")]
    GridMismatch,

    #[error("model error: {0}")]
    Model(String),

    #[error("root finding did not converge at cell {cell}: {detail}")]
    RootFinding { cell: usize, detail: String },

    #[error("power iteration did not converge after {0} iterations")]
    NormEstimate(usize),

    #[error("step matrix is singular: {0}")]
    SingularStep(String),

    #[error("solver diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("probe error: {0}")]
    Probe(String),

    #[error("infeasible state: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for usage problems, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Range { .. } | Error::Parse { .. } | Error::Io(_) => 2,
            _ => 1,
        }
    }
}
