//! Orthogonal fused multitask estimation of causal parameters.
//!
//! Each task contributes a Neyman-orthogonal loss built from cross-fitted
//! nuisance estimates. A pairwise group-lasso penalty with adaptive weights
//! fuses tasks that share a parameter value, and the resulting clusters
//! come with sandwich confidence intervals.

pub mod data;
pub mod error;
pub mod fusion;
pub mod inference;
pub mod linalg;
pub mod loss;
pub mod nuisance;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod weights;

pub use data::{ModelKind, Outcome, ParamVector, Partition, RowSelection, TaskDataset};
pub use error::{Error, Result};
pub use fusion::{solve_fused, FusionSolution, SolverConfig};
pub use inference::{sandwich_inference, ClusterInference};
pub use loss::{LossOracle, QuadraticLoss, TaskLoss};
pub use pipeline::{estimate, prepare, run_pipeline, PipelineConfig, PipelineResult, PreparedTasks};
pub use weights::{FusionHyperparams, PenaltyMatrix};
