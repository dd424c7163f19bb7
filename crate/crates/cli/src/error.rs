use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("column `{0}` not found in the CSV header")]
    MissingColumn(String),
    #[error("non-numeric value {value:?} at row {row}, column `{column}`")]
    NonNumericCell { row: usize, column: String, value: String },
    #[error("tasks below the minimum of {min} rows: {listing}")]
    TooSmallTask { min: usize, listing: String },
    #[error("need at least {needed} values for a QQ plot, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] orthofuse::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        use orthofuse::Error as E;
        match self {
            CliError::Usage(_) | CliError::Json(_) => 1,
            CliError::MissingColumn(_)
            | CliError::NonNumericCell { .. }
            | CliError::TooSmallTask { .. }
            | CliError::TooFewPoints { .. }
            | CliError::Data(_)
            | CliError::Io { .. }
            | CliError::Csv(_) => 2,
            CliError::Model(e) => match e {
                E::InvalidConfig(_) | E::InvalidSpec(_) => 1,
                E::NotPositiveDefinite { .. }
                | E::NotSymmetric
                | E::DegenerateDesign
                | E::SingularSystem
                | E::SingularHessian(_)
                | E::ZeroSe(_) => 3,
                _ => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
