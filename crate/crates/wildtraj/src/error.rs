use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input file does not conform to the expected schema (missing columns,
    /// empty file, unreadable header, malformed container).
    #[error("schema error: {0}")]
    Schema(String),

    /// More than half of the data rows were rejected.
    #[error("corrupt input: {rejected} of {total} rows rejected")]
    CorruptInput { rejected: usize, total: usize },

    /// Split construction or audit failure.
    #[error("split error: {0}")]
    Split(String),

    /// Leakage audit found violations.
    #[error("leakage audit failed: {0}")]
    LeakageAudit(String),

    /// Training diverged (non-finite loss) or cannot start.
    #[error("training error: {0}")]
    Train(String),

    /// Invalid configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Evaluation precondition violated (e.g. empty test set).
    #[error("eval error: {0}")]
    Eval(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: schema errors 2, leakage audit 3,
    /// training divergence 4, everything else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_) | Error::CorruptInput { .. } => 2,
            Error::LeakageAudit(_) => 3,
            Error::Train(_) => 4,
            _ => 1,
        }
    }
}
