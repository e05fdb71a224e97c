use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("corrupt ledger {}:{line}: {reason}", path.display())]
    LedgerCorrupt { path: PathBuf, line: usize, reason: String },
    #[error("no ledger records found under the given paths")]
    EmptyLedgerSet,
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] isoaffine::Error),
}
