use std::path::PathBuf;

use crate::csvio::CsvError;

/// Process exit status for a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Csv(#[from] CsvError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },

    #[error(transparent)]
    Core(#[from] alssnn_core::Error),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        AppError::Json { path: path.into(), source }
    }

    pub fn kind(&self) -> ExitKind {
        use alssnn_core::Error as E;
        match self {
            AppError::Usage(_) => ExitKind::Usage,
            AppError::Data(_) | AppError::Csv(_) | AppError::Io { .. } | AppError::Json { .. } => ExitKind::Data,
            AppError::Core(e) => match e {
                E::InvalidArgument(_) => ExitKind::Usage,
                E::Dimension(_) | E::InvalidDataset(_) => ExitKind::Data,
                E::RankDeficient { .. }
                | E::OrderExceedsRank { .. }
                | E::Divergence { .. }
                | E::NotSchurStable { .. }
                | E::Infeasible { .. }
                | E::Numerical(_) => ExitKind::Numerical,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind() as i32
    }
}

pub type AppResult<T> = Result<T, AppError>;
