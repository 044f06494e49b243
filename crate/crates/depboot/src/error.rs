use depboot_core::ErrorKind;

/// Error surfaced by the CLI, classified for exit codes.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] depboot_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("input: {0}")]
    Input(String),
    #[error("config: {0}")]
    Config(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        AppError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            AppError::Core(e) => e.kind(),
            AppError::Io { .. } | AppError::Input(_) => ErrorKind::Input,
            AppError::Config(_) => ErrorKind::Config,
        }
    }

    /// 2 input, 3 analysis, 4 config.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Input => 2,
            ErrorKind::Analysis => 3,
            ErrorKind::Config => 4,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind() {
            ErrorKind::Input => "input",
            ErrorKind::Analysis => "analysis",
            ErrorKind::Config => "config",
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "kind": self.kind_name(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        })
    }
}
