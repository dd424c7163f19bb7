use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{assign_clusters, generate_task, DgpConfig, SimTruth};
use super::metrics::{adjusted_rand_index, mean, median, rmse, wrmse};
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::pipeline::{adaptive_penalties, estimate, prepare, PipelineConfig, PipelineResult, PreparedTasks};
use crate::rng::{Purpose, RngHandle};
use crate::weights::{uniform_penalty, PenaltyMatrix};

/// Estimators compared in a study. All of them share the nuisance fits and
/// the fusion solver; only the penalty matrix differs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "lambda")]
pub enum Method {
    Adaptive,
    /// No fusion.
    Personalized,
    /// One penalty on every pair.
    Uniform(f64),
    /// Fixed-penalty ablation of the adaptive weights.
    Fixed(f64),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Adaptive => "adaptive".into(),
            Method::Personalized => "personalized".into(),
            Method::Uniform(l) => format!("uniform({l})"),
            Method::Fixed(l) => format!("fixed({l})"),
        }
    }

    fn penalties(&self, prepared: &PreparedTasks, cfg: &PipelineConfig) -> Result<PenaltyMatrix> {
        let m = prepared.n_tasks();
        match *self {
            Method::Adaptive => adaptive_penalties(prepared, cfg),
            Method::Personalized => uniform_penalty(m, 0.0),
            Method::Uniform(l) | Method::Fixed(l) => uniform_penalty(m, l),
        }
    }
}

/// One task under one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub rep: usize,
    pub method: String,
    pub task: usize,
    pub cluster_true: usize,
    pub cluster_est: usize,
    pub theta_true: f64,
    pub theta_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Metrics of one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepMetrics {
    pub rep: usize,
    pub method: String,
    pub rmse: f64,
    pub wrmse: f64,
    pub ari: f64,
    pub n_clusters: usize,
    pub converged: bool,
    /// Share of tasks whose interval covers the true parameter.
    pub coverage: f64,
    /// Largest within-cluster spread of the reported estimates.
    pub max_within_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub reps: usize,
    pub rmse_mean: f64,
    pub rmse_median: f64,
    pub wrmse_mean: f64,
    pub wrmse_median: f64,
    pub ari_mean: f64,
    pub ari_median: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRep {
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub summaries: Vec<MethodSummary>,
    pub replications: Vec<RepMetrics>,
    pub records: Vec<TaskRecord>,
    pub failures: Vec<FailedRep>,
}

impl MetricsReport {
    pub fn summary(&self, method: &Method) -> Option<&MethodSummary> {
        let label = method.label();
        self.summaries.iter().find(|s| s.method == label)
    }

    /// Per-replication metrics of one method, in replication order.
    pub fn metrics_of(&self, method: &Method) -> Vec<&RepMetrics> {
        let label = method.label();
        self.replications.iter().filter(|r| r.method == label).collect()
    }

    pub fn records_of(&self, method: &Method) -> Vec<&TaskRecord> {
        let label = method.label();
        self.records.iter().filter(|r| r.method == label).collect()
    }
}

/// Study settings beyond the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub dgp: DgpConfig,
    pub pipeline: PipelineConfig,
    pub methods: Vec<Method>,
    pub reps: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            pipeline: PipelineConfig::default(),
            methods: vec![Method::Adaptive, Method::Personalized],
            reps: 10,
        }
    }
}

/// The draw of one replication: truth and task data.
pub fn draw_replication(dgp: &DgpConfig, seed: u64, rep_key: u64) -> Result<(SimTruth, Vec<TaskDataset>)> {
    let truth = assign_clusters(dgp, &RngHandle::for_task(seed, rep_key, 0, Purpose::ClusterAssignment))?;
    let tasks = (0..dgp.m)
        .map(|j| generate_task(dgp, &truth, j, &RngHandle::for_task(seed, rep_key, j as u64, Purpose::Data)))
        .collect::<Result<Vec<_>>>()?;
    Ok((truth, tasks))
}

struct RepOutput {
    metrics: Vec<RepMetrics>,
    records: Vec<TaskRecord>,
}

fn score(rep: usize, method: &Method, truth: &SimTruth, tasks: &[TaskDataset], res: &PipelineResult) -> Result<RepOutput> {
    let m = tasks.len();
    let labels = res.solution.partition.labels();
    let true_partition = truth.partition();
    let cluster_sizes: Vec<f64> = (0..m)
        .map(|j| {
            let k = truth.cluster_of[j];
            (0..m).filter(|&i| truth.cluster_of[i] == k).map(|i| tasks[i].n() as f64).sum()
        })
        .collect();
    let mut records = Vec::with_capacity(m);
    let mut covered = 0;
    for j in 0..m {
        let c = &res.inference[labels[j]];
        let theta_true = truth.theta_star[j].0[0];
        if c.ci_lo[0] <= theta_true && theta_true <= c.ci_hi[0] {
            covered += 1;
        }
        records.push(TaskRecord {
            rep,
            method: method.label(),
            task: j,
            cluster_true: truth.cluster_of[j],
            cluster_est: labels[j],
            theta_true,
            theta_hat: res.estimates[j].0[0],
            se: res.task_se[j],
            ci_lo: c.ci_lo[0],
            ci_hi: c.ci_hi[0],
        });
    }
    let mut spread: f64 = 0.0;
    for cluster in res.solution.partition.clusters() {
        for &a in cluster {
            for &b in cluster {
                let d = res.estimates[a]
                    .0
                    .iter()
                    .zip(&res.estimates[b].0)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                spread = spread.max(d);
            }
        }
    }
    let ari = if m >= 2 {
        adjusted_rand_index(&true_partition, &res.solution.partition)?
    } else {
        1.0
    };
    let metrics = vec![RepMetrics {
        rep,
        method: method.label(),
        rmse: rmse(&res.estimates, &truth.theta_star)?,
        wrmse: wrmse(&res.estimates, &truth.theta_star, &cluster_sizes)?,
        ari,
        n_clusters: res.solution.n_clusters(),
        converged: res.solution.converged,
        coverage: covered as f64 / m as f64,
        max_within_spread: spread,
    }];
    Ok(RepOutput { metrics, records })
}

fn run_replication(cfg: &MonteCarloConfig, seed: u64, rep: usize) -> Result<RepOutput> {
    let mut pipeline = cfg.pipeline.clone();
    pipeline.model = cfg.dgp.model;
    let attempt = |rep_key: u64| -> Result<RepOutput> {
        let (truth, tasks) = draw_replication(&cfg.dgp, seed, rep_key)?;
        let prepared = prepare(&tasks, &pipeline, seed, rep_key, false)?;
        let mut out = RepOutput {
            metrics: Vec::new(),
            records: Vec::new(),
        };
        for method in &cfg.methods {
            let penalties = method.penalties(&prepared, &pipeline)?;
            let res = estimate(&prepared, penalties, &pipeline)?;
            let scored = score(rep, method, &truth, &tasks, &res)?;
            out.metrics.extend(scored.metrics);
            out.records.extend(scored.records);
        }
        Ok(out)
    };
    match attempt(rep as u64) {
        Ok(out) => Ok(out),
        Err(first) => {
            // One fresh draw on a disjoint stream range before giving up.
            warn!("replication {rep} failed ({first}); resampling once");
            attempt(rep as u64 | (1 << 40))
        }
    }
}

fn summarize(method: &Method, reps: &[&RepMetrics]) -> MethodSummary {
    let col = |f: fn(&RepMetrics) -> f64| reps.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let (r, w, a, c) = (col(|r| r.rmse), col(|r| r.wrmse), col(|r| r.ari), col(|r| r.coverage));
    MethodSummary {
        method: method.label(),
        reps: reps.len(),
        rmse_mean: mean(&r),
        rmse_median: median(&r),
        wrmse_mean: mean(&w),
        wrmse_median: median(&w),
        ari_mean: mean(&a),
        ari_median: median(&a),
        coverage: mean(&c),
    }
}

/// Runs `cfg.reps` independent replications on the rayon pool.
///
/// Output order is by replication and method regardless of scheduling, and
/// replications that fail twice are listed in `failures`.
pub fn run_monte_carlo(cfg: &MonteCarloConfig, seed: u64) -> Result<MetricsReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    cfg.dgp.validate()?;
    cfg.pipeline.validate()?;
    let outputs: Vec<Result<RepOutput>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replication(cfg, seed, rep))
        .collect();
    let mut replications = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, out) in outputs.into_iter().enumerate() {
        match out {
            Ok(o) => {
                replications.extend(o.metrics);
                records.extend(o.records);
            }
            Err(e) => failures.push(FailedRep {
                rep,
                error: e.to_string(),
            }),
        }
    }
    let summaries = cfg
        .methods
        .iter()
        .map(|m| {
            let label = m.label();
            let reps: Vec<&RepMetrics> = replications.iter().filter(|r| r.method == label).collect();
            summarize(m, &reps)
        })
        .collect();
    Ok(MetricsReport {
        summaries,
        replications,
        records,
        failures,
    })
}
