//! Experiment driver: runs strategy × seed grids, computes metrics in a
//! post-pass, writes CSV and a JSON summary.

mod config;
mod experiment;
mod metrics;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agents::UnknownStrategy;
use crate::channel::ChannelError;
use crate::topology::TopologyError;

pub use config::{co_channel_subset, ExperimentConfig, TopologySource};
pub use experiment::{
    finalize_runs, read_metrics_csv, run_experiment, run_seed, write_metrics_csv, ExperimentSummary, MetricsRecord,
    SeedRun, StrategySummary, SUMMARY_WINDOW,
};
pub use metrics::{
    cumulative_regret, ema, median, normalized_reward, percentile_sorted, quartiles, starvation_count, RewardBounds,
    EMA_ALPHA, STARVATION_RATIO,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Strategy(#[from] UnknownStrategy),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
