use std::path::PathBuf;

/// Errors raised across the pipeline.
///
/// The variants mirror the failure classes the CLI maps onto exit codes:
/// configuration and contract violations are caller bugs, input and format
/// errors come from data.
#[derive(Debug, thiserror::Error)]
pub enum MddError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("refused: {0}")]
    Refused(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<MddError>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MddError> = std::result::Result<T, E>;

impl MddError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MddError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        MddError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &str) -> Self {
        MddError::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad data rather than bad invocation.
    pub fn is_data_error(&self) -> bool {
        match self {
            MddError::Stage { source, .. } => source.is_data_error(),
            other => matches!(
                other,
                MddError::Input(_) | MddError::Format { .. } | MddError::Io { .. }
            ),
        }
    }
}
