use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure in {op} for robot {robot} at t = {t:.3} s: {source}")]
    Numerical {
        op: &'static str,
        robot: u32,
        t: f64,
        #[source]
        source: lieloc_core::Error,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad run output: {0}")]
    Output(String),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for configuration and input problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Numerical { .. } => 3,
            _ => 2,
        }
    }
}

pub type SimResult<T> = Result<T, SimError>;
