use dsm_core::engine::EngineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical abort in cell {cell}: {source}")]
    Numerical { cell: String, source: EngineError },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl HarnessError {
    pub fn from_engine_config(e: EngineError) -> Self {
        HarnessError::Config(e.to_string())
    }

    /// Engine errors inside a cell: configuration problems stay configuration
    /// errors, everything else is numerical.
    pub fn in_cell(cell: &str, e: EngineError) -> Self {
        match e {
            EngineError::Config(m) => HarnessError::Config(format!("{cell}: {m}")),
            source => HarnessError::Numerical {
                cell: cell.to_string(),
                source,
            },
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// 0 success, 1 configuration or IO, 2 numerical abort, 3 failed check.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io { .. } | HarnessError::Trace(_) => 1,
            HarnessError::Numerical { .. } => 2,
            HarnessError::CheckFailed(_) => 3,
        }
    }
}
