//! Error envelope with stable machine-readable kinds and process exit
//! codes: 0 ok, 2 IO/data, 3 config, 4 numeric, 5 internal consistency.

use medbart_core::Error as CoreError;
use serde::Serialize;

pub type AppResult<T> = Result<T, AppError>;

#[derive(Debug, thiserror::Error)]
#[error("{kind}: {message}")]
pub struct AppError {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl AppError {
    pub fn new(kind: &str, exit_code: i32, message: impl Into<String>) -> Self {
        AppError {
            kind: kind.into(),
            message: message.into(),
            exit_code,
        }
    }

    pub fn io_not_found(path: &std::path::Path) -> Self {
        Self::new("io.not_found", 2, format!("no such file: {}", path.display()))
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new("io.error", 2, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config.invalid", 3, message)
    }

    pub fn stale(message: impl Into<String>) -> Self {
        Self::new("config.stale_artifact", 3, message)
    }

    /// JSON envelope written to stderr on failure.
    pub fn envelope(&self) -> String {
        #[derive(Serialize)]
        struct Env<'a> {
            error: Inner<'a>,
        }
        #[derive(Serialize)]
        struct Inner<'a> {
            kind: &'a str,
            message: &'a str,
        }
        serde_json::to_string(&Env {
            error: Inner {
                kind: &self.kind,
                message: &self.message,
            },
        })
        .expect("error envelope serialization")
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        let (kind, code) = match &e {
            CoreError::Argument(_) => ("config.invalid", 3),
            CoreError::Schema(_) => ("data.schema", 2),
            CoreError::Parse { .. } => ("data.parse", 2),
            CoreError::Validation(_) => ("data.validation", 2),
            CoreError::SingularDesign { .. } => ("numeric.singular_design", 4),
            CoreError::DegreesOfFreedom(_) => ("numeric.degrees_of_freedom", 4),
            CoreError::DegenerateDesign(_) => ("numeric.degenerate_design", 4),
            CoreError::Numeric(_) => ("numeric.error", 4),
            CoreError::InternalConsistency(_) => ("consistency.routes", 5),
            CoreError::Dimension(_) => ("numeric.dimension", 4),
        };
        AppError::new(kind, code, e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        let kind = match e.kind() {
            std::io::ErrorKind::NotFound => "io.not_found",
            _ => "io.error",
        };
        AppError::new(kind, 2, e.to_string())
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::new("data.parse", 2, e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::new("io.artifact", 2, e.to_string())
    }
}
