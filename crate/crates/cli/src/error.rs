use pcmi_core::dataset::DatasetError;
use pcmi_core::experiments::ExperimentError;
use pcmi_core::lm::LmError;
use pcmi_core::selection::SelectionError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error("input missing: {}", .0.display())]
    InputMissing(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
}

impl CliError {
    /// 1 for validation problems, 2 for I/O and backend failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 1,
            CliError::InputMissing(_) | CliError::Io { .. } | CliError::BackendUnavailable(_) => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::InputMissing(path)
        } else {
            CliError::Io { path, source }
        }
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::Transport(_) => CliError::BackendUnavailable(e.to_string()),
            LmError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            LmError::InvalidConfig(_) => CliError::Config(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<pcmi_core::scoring::ScoringError> for CliError {
    fn from(e: pcmi_core::scoring::ScoringError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<pcmi_annotate::StoreError> for CliError {
    fn from(e: pcmi_annotate::StoreError) -> Self {
        use pcmi_annotate::StoreError;
        match e {
            StoreError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::Validation(other.to_string()),
        }
    }
}
