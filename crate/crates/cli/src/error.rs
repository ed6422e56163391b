use std::io;
use std::path::PathBuf;

use eapcr_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    /// `row` is the 1-based line number in the file, the header being line 1.
    #[error("unparsable cell at row {row}, column `{col}`: {text:?}")]
    UnparsableCell { row: usize, col: String, text: String },
    #[error("timestamps are not strictly increasing at row {row}")]
    NonMonotoneTimestamps { row: usize },
    #[error("feature mismatch: checkpoint expects [{}], data has [{}]", .expected.join(", "), .found.join(", "))]
    FeatureMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", .path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("config {}: {msg}", .path.display())]
    ConfigFile { path: PathBuf, msg: String },
    #[error("{failed} of {total} sweep rows failed")]
    PartialFailure { failed: usize, total: usize, code: i32 },
}

impl CliError {
    /// 2 for configuration problems, 4 for numerical divergence, 3 for
    /// everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::Config(_)) | CliError::ConfigFile { .. } => 2,
            CliError::Core(CoreError::Divergence { .. }) => 4,
            CliError::PartialFailure { code, .. } => *code,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
