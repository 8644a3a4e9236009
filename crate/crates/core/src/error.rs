use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    Shape {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("unknown block {0:?}")]
    UnknownBlock(String),
    #[error("no samples")]
    NoSamples,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("rank exceeds width: rank {rank}, width {width}")]
    Infeasible { rank: usize, width: usize },
    #[error("undefined deviation: {0}")]
    UndefinedDeviation(String),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
