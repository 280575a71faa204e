//! Command-line orchestration of the synthetic benchmark campaigns.
//!
//! Output layout under the root directory:
//!
//! ```text
//! data/                 train.wf01 val.wf01 test.wf01 buoys.csv manifest.json
//! models/<cell>/        run00.ckpt run00.csv ... manifest.json
//! <campaign>/           metrics.csv, sweep CSVs, SVG plots, manifest.json
//! report.md
//! ```
//!
//! Every `manifest.json` records the config hash and the SHA-256 of each
//! file it covers.

pub mod artifacts;
pub mod cells;
pub mod config;
pub mod data;
pub mod report;
pub mod run;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("numerical divergence: {0}")]
    Diverged(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<windosse::Error> for CliError {
    fn from(e: windosse::Error) -> Self {
        use windosse::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::InvalidInput(m) => CliError::Config(m),
            E::MissingInput(m) => CliError::Missing(m),
            E::NonFinite(m) => CliError::Diverged(m),
            E::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::Missing(path.display().to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}
