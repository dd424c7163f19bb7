//! End-to-end estimator: pilot, adaptive weights, split nuisances, fused
//! solve, inference.
//!
//! Work is split in two so that several penalty choices can share one set of
//! nuisance fits: [`prepare`] produces pilots and task losses, [`estimate`]
//! fuses them under any [`PenaltyMatrix`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, ModelKind, ParamVector, RowSelection, TaskDataset};
use crate::error::{Error, Result};
use crate::fusion::{refit_clusters, solve_fused, FusionSolution, SolverConfig};
use crate::inference::{sandwich_inference, task_standard_errors, ClusterInference};
use crate::loss::{build_task_loss, crossfit_task_losses, LossOracle, TaskLoss};
use crate::nuisance::{fit_task_nuisances, NuisanceLearnerSpec};
use crate::rng::{Purpose, RngHandle};
use crate::weights::{compute_weights, fit_pilot, FusionHyperparams, PenaltyMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelKind,
    pub learner: NuisanceLearnerSpec,
    /// Propensity clipping bounds.
    pub clip: (f64, f64),
    pub fusion: FusionHyperparams,
    pub solver: SolverConfig,
    /// `2` is a single split (nuisances on one half, loss on the other);
    /// `R ≥ 3` is full R-fold cross-fitting.
    pub crossfit: usize,
    pub level: f64,
    /// Report the unpenalized pooled refit instead of the penalized θ̂.
    pub refit: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Plm,
            learner: NuisanceLearnerSpec::default(),
            clip: (0.05, 0.95),
            fusion: FusionHyperparams::default(),
            solver: SolverConfig::default(),
            crossfit: 2,
            level: 0.95,
            refit: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        self.fusion.validate()?;
        self.solver.validate()?;
        if self.crossfit < 2 {
            return Err(Error::InvalidConfig(format!(
                "crossfit must be at least 2, got {}",
                self.crossfit
            )));
        }
        let (lo, hi) = self.clip;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::InvalidConfig(format!("invalid clip bounds ({lo}, {hi})")));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

/// Pilots and split-sample losses of all tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedTasks {
    pub pilots: Vec<ParamVector>,
    pub losses: Vec<TaskLoss>,
}

impl PreparedTasks {
    pub fn n_tasks(&self) -> usize {
        self.losses.len()
    }

    pub fn oracles(&self) -> Vec<&dyn LossOracle> {
        self.losses.iter().map(|l| l as &dyn LossOracle).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub penalties: PenaltyMatrix,
    pub solution: FusionSolution,
    /// Reported per-task estimates: the penalized θ̂, or the cluster refit.
    pub estimates: Vec<ParamVector>,
    pub inference: Vec<ClusterInference>,
    /// Standard error of each task's cluster, first coordinate.
    pub task_se: Vec<f64>,
}

/// Pilot and orthogonal loss for one task.
///
/// `rep` and the task's position select the random streams, so results do
/// not depend on thread scheduling.
pub fn prepare_task(
    data: &TaskDataset,
    cfg: &PipelineConfig,
    seed: u64,
    rep: u64,
    task: usize,
) -> Result<(ParamVector, TaskLoss)> {
    let learner_rng = RngHandle::for_task(seed, rep, task as u64, Purpose::Learner);
    let split_rng = RngHandle::for_task(seed, rep, task as u64, Purpose::Split);
    let pilot = fit_pilot(data, cfg.model, &cfg.learner, cfg.clip, &learner_rng)?;
    let split = split_dataset(data, cfg.crossfit, &split_rng)?;
    let loss = if cfg.crossfit == 2 {
        let fits = fit_task_nuisances(&split, cfg.model, &cfg.learner, RowSelection::Fold(0), cfg.clip, &learner_rng)?;
        build_task_loss(&split, &fits, RowSelection::Fold(0), RowSelection::Fold(1))?
    } else {
        let folds = (0..cfg.crossfit)
            .map(|r| {
                let fits = fit_task_nuisances(
                    &split,
                    cfg.model,
                    &cfg.learner,
                    RowSelection::Complement(r),
                    cfg.clip,
                    &learner_rng,
                )?;
                build_task_loss(&split, &fits, RowSelection::Complement(r), RowSelection::Fold(r))
            })
            .collect::<Result<Vec<_>>>()?;
        crossfit_task_losses(folds)?
    };
    Ok((pilot, loss))
}

/// Runs [`prepare_task`] for every task, in parallel when `parallel` is set.
pub fn prepare(
    tasks: &[TaskDataset],
    cfg: &PipelineConfig,
    seed: u64,
    rep: u64,
    parallel: bool,
) -> Result<PreparedTasks> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::EmptyData);
    }
    let run = |(j, t): (usize, &TaskDataset)| prepare_task(t, cfg, seed, rep, j);
    let results: Vec<Result<(ParamVector, TaskLoss)>> = if parallel {
        tasks.par_iter().enumerate().map(run).collect()
    } else {
        tasks.iter().enumerate().map(run).collect()
    };
    let (pilots, losses) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(PreparedTasks { pilots, losses })
}

/// Fused solve and inference on prepared tasks under given penalties.
pub fn estimate(prepared: &PreparedTasks, penalties: PenaltyMatrix, cfg: &PipelineConfig) -> Result<PipelineResult> {
    let oracles = prepared.oracles();
    let solution = solve_fused(&oracles, &penalties, &cfg.solver)?;
    let estimates = if cfg.refit {
        let pooled = refit_clusters(&oracles, &solution.partition)?;
        let mut out = solution.theta_hat.clone();
        for (cluster, beta) in solution.partition.clusters().iter().zip(pooled) {
            for &j in cluster {
                out[j] = beta.clone();
            }
        }
        out
    } else {
        solution.theta_hat.clone()
    };
    let inference = sandwich_inference(&solution.partition, &prepared.losses, &estimates, cfg.level)?;
    let task_se = task_standard_errors(&inference, prepared.n_tasks());
    Ok(PipelineResult {
        penalties,
        solution,
        estimates,
        inference,
        task_se,
    })
}

/// Adaptive penalties from the prepared pilots.
pub fn adaptive_penalties(prepared: &PreparedTasks, cfg: &PipelineConfig) -> Result<PenaltyMatrix> {
    if prepared.n_tasks() == 1 {
        return PenaltyMatrix::from_fn(1, |_, _| 0.0);
    }
    compute_weights(&prepared.pilots, &cfg.fusion)
}

/// The full adaptive estimator on a set of tasks.
pub fn run_pipeline(tasks: &[TaskDataset], cfg: &PipelineConfig, seed: u64) -> Result<PipelineResult> {
    let prepared = prepare(tasks, cfg, seed, 0, true)?;
    let penalties = adaptive_penalties(&prepared, cfg)?;
    estimate(&prepared, penalties, cfg)
}
