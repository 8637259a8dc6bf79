//! Error metrics, the seasonal naïve baseline, transfer matrices and the
//! scenario runner.

pub mod baseline;
pub mod matrix;
pub mod metrics;
pub mod scenario;

pub use baseline::{previous_year_date, seasonal_naive};
pub use matrix::{cell_stats, transfer_matrix_summary, CellStats, MatrixSummary, TransferMatrix};
pub use metrics::{mape, monthly_average_mape, percentage_change, rmse, MapeResult, MonthMape, MonthlyMape};
pub use scenario::{
    run_all, run_scenario, split_train_test, EntityOutcome, EvaluationReport, MatrixReport, RunConfig, ScenarioConfig,
    ScenarioId, ScenarioOutcome, Split, TrainWindow,
};
