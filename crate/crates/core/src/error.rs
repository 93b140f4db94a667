use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error categories shared by every subsystem. The CLI maps each category
/// onto a distinct process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown {kind} `{id}`")]
    Lookup { kind: &'static str, id: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("protocol error from client {client}: {reason}")]
    Protocol { client: usize, reason: String },
    #[error("ledger tampered at entry {index}: {reason}")]
    Tamper { index: u64, reason: String },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Lookup { .. } | Error::Input(_) | Error::Parse { .. } => 3,
            Error::Protocol { .. } => 4,
            Error::Tamper { .. } => 5,
            Error::UndefinedMetric(_) => 6,
            Error::GradCheck(_) => 7,
            Error::Io(_) => 8,
        }
    }

    pub(crate) fn lookup(kind: &'static str, id: impl ToString) -> Self {
        Error::Lookup { kind, id: id.to_string() }
    }
}
