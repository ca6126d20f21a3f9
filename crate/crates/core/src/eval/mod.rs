//! Generalization protocol, robust statistics and scaling fits.

mod protocol;
mod records;
mod stats;

pub use protocol::{splits, test_seeds, Split, Strategy, StrategyKind, TEST_EPISODES, TRAIN_SEEDS};
pub use records::{summarize, write_scores_csv, CellSummary, RunRecord, ScaleRow, write_scale_csv};
pub use stats::{bootstrap_ci, fit_power_law, iqm, mean, median, percentile, spread_stats, PowerLaw, Spread};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("{0}")]
    Invalid(String),
    #[error("{have} instances are too few for strategy {strategy:?}")]
    TooFewInstances { have: usize, strategy: StrategyKind },
    #[error("csv: {0}")]
    Csv(String),
}
