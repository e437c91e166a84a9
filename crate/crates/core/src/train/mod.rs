//! Multi-task training, the metric suite, relative improvement and the
//! initialization-strategy comparison grid.

mod fit;
mod grid;
mod metrics;
mod run;

use thiserror::Error;

pub use fit::{dataset_loss, fit, train, EpochLoss, EpochRecord, History, TrainConfig, Trained};
pub use grid::{
    assemble, flag_key, flags, mean_report, run_grid, ComparisonTable, GridConfig, GridRow, RiCell, RiRow, SeedOutcome,
    TABLE_COLUMNS,
};
pub use metrics::{
    classification_metrics, evaluate, predict, regression_metrics, task_metrics, ClassMetrics, Metric, MetricReport,
    Predictions, RegressionMetrics,
};
pub use run::{build_tables, init_model, run_single, EmbeddingSource, InitStrategy, RunConfig, RunReport, SplitReports};

use crate::dataset::DataError;
use crate::embed::EmbedError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no valid targets to evaluate")]
    EmptyEval,
    #[error("relative improvement needs a positive baseline score, got {0}")]
    Domain(f64),
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: Box<ModelError>,
        history: History,
    },
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// `(s_eval - s_base) / s_base * 100`, in percent.
pub fn relative_improvement(s_eval: f64, s_base: f64) -> Result<f64, TrainError> {
    if !(s_base > 0.0) || !s_base.is_finite() {
        return Err(TrainError::Domain(s_base));
    }
    Ok((s_eval - s_base) / s_base * 100.0)
}
