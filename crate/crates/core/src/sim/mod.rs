//! Synthetic studies: data-generating processes, metrics and the Monte
//! Carlo driver.

mod dgp;
mod metrics;
mod monte_carlo;

pub use dgp::{
    assign_clusters, g_fn, generate_task, h_fn, mu0_fn, mu1_fn, propensity_fn, DgpConfig, SimTruth, TaskTruth,
};
pub use metrics::{adjusted_rand_index, mean, median, rmse, wrmse};
pub use monte_carlo::{
    draw_replication, run_monte_carlo, FailedRep, MethodSummary, MetricsReport, Method, MonteCarloConfig, RepMetrics,
    TaskRecord,
};
