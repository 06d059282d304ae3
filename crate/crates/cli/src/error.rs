use honest_esp::ErrorClass;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] honest_esp::Error),
    #[error("{0}")]
    Usage(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::Core(e) => e.class(),
            _ => ErrorClass::Validation,
        }
    }

    /// 2 for validation failures, 3 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Validation => 2,
            ErrorClass::Numerical => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
