use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const IO: i32 = 4;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("report refused: {0}")]
    Report(String),

    /// A report was written but some of its runs diverged or fell.
    #[error("{0} run(s) failed; see the report")]
    RunsFailed(usize),

    #[error(transparent)]
    Core(#[from] legsim_core::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => exit::CONFIG,
            HarnessError::Io { .. } => exit::IO,
            HarnessError::Report(_) => exit::FAILURE,
            HarnessError::RunsFailed(_) => exit::DIVERGED,
            HarnessError::Core(e) => core_code(e),
        }
    }
}

fn core_code(e: &legsim_core::Error) -> i32 {
    use legsim_core::Error as E;
    match e {
        E::Config(_) | E::InvalidMorphology(_) | E::InvalidGait(_) | E::Description(_) => exit::CONFIG,
        E::Diverged { .. } => exit::DIVERGED,
        E::Io(_) => exit::IO,
        E::Leg { source, .. } => core_code(source),
        _ => exit::FAILURE,
    }
}
