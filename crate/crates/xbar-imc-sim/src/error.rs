use std::path::PathBuf;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] xbar_core::Error),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        SimError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// 2 for configuration and input errors, 3 for numerical failures,
    /// 4 for I/O and file-format errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 2,
            SimError::Io { .. } | SimError::Format { .. } => 4,
            SimError::Core(e) if e.is_numerical() => 3,
            SimError::Core(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let nc = xbar_core::Error::NonConvergence {
            solver: "array",
            iterations: 500,
            residual: 1e-3,
            trace: Vec::new(),
        };
        assert_eq!(SimError::from(nc.clone()).exit_code(), 3);
        let tile = xbar_core::Error::Tile {
            layer: 0,
            tile: 1,
            source: Box::new(nc),
        };
        assert_eq!(SimError::from(tile).exit_code(), 3);
        assert_eq!(SimError::from(xbar_core::Error::Empty("dataset")).exit_code(), 2);
        assert_eq!(SimError::config("x").exit_code(), 2);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(SimError::io("a", io).exit_code(), 4);
        assert_eq!(SimError::format("a", "b").exit_code(), 4);
    }
}
