//! Library side of the `roars` command: configuration files, the online
//! simulation loop, training and benchmark drivers.

pub mod bench;
pub mod config;
pub mod sim;
pub mod svg;
pub mod train;

use thiserror::Error;

pub use roars_core as core;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error(transparent)]
    Scenario(#[from] roars_core::scenario::ScenarioError),
    #[error(transparent)]
    Policy(#[from] roars_core::policy::PolicyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Caps the rayon pool at `ROARS_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("ROARS_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Invalid(format!("ROARS_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    Ok(())
}
