//! Budgeted learning-rate sweeps: training runs over rate and batch-size
//! grids, best-k-of-n aggregation, optimal-rate selection with error bars,
//! and the scan templates built on them.

mod aggregate;
mod run;
mod spec;
mod templates;

pub use aggregate::{aggregate_best_k, mean_std, select_optimal_lr, GridPointSummary, Selection};
pub use run::{run_training, CurvePoint, RunConfig, RunOutcome, RunRecord, Task};
pub use spec::{ErrorBarRule, FinalGrid, LrGrid, LrPoint, ModelSpec, Objective, SweepSpec};
pub use templates::{
    budget_scan, endpoint_optimum, endpoint_scan, plan, regime_scan, run_seed, run_sweep, summarize, BatchResult, BudgetRow,
    EndpointOptimum, EndpointScan, Optimum, RegimeRow, SweepOutput, SweepResult,
};
