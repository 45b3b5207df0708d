//! Offline/online orchestration: training snapshots, POD and operator build,
//! collocation sweeps of the stabilized ROM, and the verification report.

mod config;
mod offline;
mod online;
mod tools;
mod verify;

use std::path::PathBuf;

use thiserror::Error;

use crate::dense::LinalgError;
use crate::fom::FomError;
use crate::io::FormatError;
use crate::pod::PodError;
use crate::rom::RomError;
use crate::uq::UqError;

pub use config::{env_key, ModeCount, ModelKind, NodeFiles, PipelineConfig, ENV_PREFIX};
pub use offline::{offline, Artifacts, OfflineSummary};
pub use online::{online, ExpectationSeries, OnlineReport, VariantError};
pub use tools::{analyze_filter, mc_check, run_fom, McReport};
pub use verify::{check_weight_normalization, verify, Check, VerifyReport};

/// Exit status for validation problems (bad config, missing artifacts, failed checks).
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status for numerical failures (singular or non-finite solves).
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing or inconsistent artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("{failed} verification check(s) failed")]
    Verification { failed: usize },
    #[error("node {index}: {source}")]
    Node {
        index: usize,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Fom(#[from] FomError),
    #[error(transparent)]
    Pod(#[from] PodError),
    #[error(transparent)]
    Rom(#[from] RomError),
    #[error(transparent)]
    Uq(#[from] UqError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    pub(crate) fn at_node(index: usize, e: impl Into<PipelineError>) -> Self {
        PipelineError::Node {
            index,
            source: Box::new(e.into()),
        }
    }

    pub fn is_numerical(&self) -> bool {
        match self {
            PipelineError::Node { source, .. } => source.is_numerical(),
            PipelineError::Fom(e) => fom_numerical(e),
            PipelineError::Linalg(_) | PipelineError::Pod(PodError::Linalg(_)) => true,
            PipelineError::Rom(e) => rom_numerical(e),
            PipelineError::Uq(UqError::Runner { .. }) => true,
            _ => false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_VALIDATION
        }
    }
}

fn fom_numerical(e: &FomError) -> bool {
    matches!(e, FomError::Singular { .. } | FomError::NonFinite(_) | FomError::Linalg(_))
}

fn rom_numerical(e: &RomError) -> bool {
    match e {
        RomError::Step { source, .. } => rom_numerical(source),
        RomError::Linalg(_) | RomError::FilterAssembly(_) => true,
        RomError::Fom(f) => fom_numerical(f),
        _ => false,
    }
}

/// Runs `f` on a pool of `workers` threads, or the global pool when `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), EXIT_VALIDATION);
        let sing = PipelineError::Fom(FomError::Singular { row: 1, t: 0.1 });
        assert_eq!(sing.exit_code(), EXIT_NUMERICAL);
        assert_eq!(PipelineError::at_node(3, sing).exit_code(), EXIT_NUMERICAL);
        let step = RomError::Step {
            step: 2,
            t: 0.1,
            source: Box::new(RomError::Linalg(LinalgError::Singular { pivot: 0 })),
        };
        assert_eq!(PipelineError::Rom(step).exit_code(), EXIT_NUMERICAL);
        let rank = PodError::Rank { requested: 9, max: 3 };
        assert_eq!(PipelineError::Pod(rank).exit_code(), EXIT_VALIDATION);
    }
}
