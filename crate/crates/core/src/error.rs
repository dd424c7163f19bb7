use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("task has {n} observations but at least {required} are needed")]
    TooFewObservations { n: usize, required: usize },
    #[error("no observations to fit on")]
    EmptyData,
    #[error("invalid learner specification: {0}")]
    InvalidSpec(String),
    #[error("no control rows (treatment = 0) available for {0}")]
    NoControlRows(&'static str),
    #[error("no treated rows (treatment = 1) available for {0}")]
    NoTreatedRows(&'static str),
    #[error("orthogonal loss is degenerate: the target parameter is not identified")]
    DegenerateDesign,
    #[error("propensity score {0} lies on the boundary of [0, 1]; clip before building the loss")]
    UnclippedPropensity(f64),
    #[error("weight fold contains no treated units")]
    NoTreatedInWeightFold,
    #[error("weight fold carries zero control mass")]
    ZeroControlMass,
    #[error("diagnostic requires the true nuisance functions (simulation only)")]
    RequiresTruth,
    #[error("fused system is singular")]
    SingularSystem,
    #[error("cluster {0} has a singular Hessian")]
    SingularHessian(usize),
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("standard error of task {0} is zero")]
    ZeroSe(usize),
    #[error("adjusted Rand index needs at least two elements")]
    SingleElement,
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not draw a cluster assignment with every cluster nonempty after {0} attempts")]
    EmptyClusterRetry(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
