//! Result files: the fit report, simulation tables and penalty listings.
//!
//! All tables are CSV with a header row. Floats are written in shortest
//! round-trip form.

use std::fs;
use std::path::{Path, PathBuf};

use orthofuse::sim::MetricsReport;
use orthofuse::{ClusterInference, PenaltyMatrix, PipelineResult};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEstimate {
    pub task: usize,
    pub label: String,
    pub n: usize,
    pub theta_hat: Vec<f64>,
    pub cluster: usize,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub model: String,
    pub iterations: usize,
    pub converged: bool,
    pub objective_value: f64,
}

/// Everything `fit` produces, in one serializable document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tasks: Vec<TaskEstimate>,
    pub clusters: Vec<ClusterInference>,
    pub metadata: RunMetadata,
}

impl FitReport {
    pub fn new(cfg: &RunConfig, labels: &[String], sizes: &[usize], result: &PipelineResult) -> Result<Self> {
        let cluster_of = result.solution.partition.labels();
        let tasks = labels
            .iter()
            .enumerate()
            .map(|(j, label)| TaskEstimate {
                task: j,
                label: label.clone(),
                n: sizes[j],
                theta_hat: result.estimates[j].0.clone(),
                cluster: cluster_of[j],
                se: result.task_se[j],
            })
            .collect();
        Ok(Self {
            tasks,
            clusters: result.inference.clone(),
            metadata: RunMetadata {
                config_hash: cfg.hash()?,
                seed: cfg.seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                model: cfg.model.to_string(),
                iterations: result.solution.iterations,
                converged: result.solution.converged,
                objective_value: result.solution.objective_value,
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| CliError::io(path, e))?)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        fill(&mut w)?;
        w.flush().map_err(|e| CliError::io("<csv output>", e))?;
    }
    Ok(buf)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// One row per task; vector parameters are `;`-joined.
pub fn tasks_csv(report: &FitReport) -> Result<Vec<u8>> {
    csv_bytes(&["task", "label", "n", "cluster", "theta_hat", "se"], |w| {
        for t in &report.tasks {
            w.write_record([
                t.task.to_string(),
                t.label.clone(),
                t.n.to_string(),
                t.cluster.to_string(),
                join(&t.theta_hat),
                t.se.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// One row per cluster with member labels `;`-joined.
pub fn clusters_csv(report: &FitReport) -> Result<Vec<u8>> {
    csv_bytes(&["cluster_id", "members", "n_k", "estimate", "se", "ci_lo", "ci_hi", "level"], |w| {
        for c in &report.clusters {
            let members: Vec<&str> = c.members.iter().map(|&j| report.tasks[j].label.as_str()).collect();
            w.write_record([
                c.cluster_id.to_string(),
                members.join(";"),
                c.n_k.to_string(),
                join(&c.estimate.0),
                join(&c.se),
                join(&c.ci_lo),
                join(&c.ci_hi),
                c.level.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Every unordered pair with its penalty and where it came from.
pub fn penalties_csv(penalties: &PenaltyMatrix, labels: &[String]) -> Result<Vec<u8>> {
    csv_bytes(&["j", "k", "lambda", "provenance"], |w| {
        for (j, k, lambda) in penalties.edges() {
            let provenance = serde_json::to_value(penalties.provenance(j, k))?;
            w.write_record([
                labels[j].clone(),
                labels[k].clone(),
                lambda.to_string(),
                provenance.as_str().unwrap_or_default().to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Writes `fit_report.json`, `tasks.csv`, `clusters.csv` and `penalties.csv`.
pub fn write_fit_outputs(dir: &Path, report: &FitReport, penalties: &PenaltyMatrix) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let labels: Vec<String> = report.tasks.iter().map(|t| t.label.clone()).collect();
    Ok(vec![
        write_file(&dir.join("fit_report.json"), report.to_json()?.as_bytes())?,
        write_file(&dir.join("tasks.csv"), &tasks_csv(report)?)?,
        write_file(&dir.join("clusters.csv"), &clusters_csv(report)?)?,
        write_file(&dir.join("penalties.csv"), &penalties_csv(penalties, &labels)?)?,
    ])
}

#[derive(Debug, Serialize)]
struct SimulationSummary<'a> {
    config_hash: String,
    seed: u64,
    version: &'static str,
    summaries: &'a [orthofuse::sim::MethodSummary],
    failures: &'a [orthofuse::sim::FailedRep],
}

/// Writes `records.csv`, `replications.csv`, `summary.json` and `config.json`.
pub fn write_simulation_outputs(dir: &Path, cfg: &RunConfig, report: &MetricsReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let records = csv_bytes(
        &["rep", "method", "task", "cluster_true", "cluster_est", "theta_true", "theta_hat", "se", "ci_lo", "ci_hi"],
        |w| {
            for r in &report.records {
                w.write_record([
                    r.rep.to_string(),
                    r.method.clone(),
                    r.task.to_string(),
                    r.cluster_true.to_string(),
                    r.cluster_est.to_string(),
                    r.theta_true.to_string(),
                    r.theta_hat.to_string(),
                    r.se.to_string(),
                    r.ci_lo.to_string(),
                    r.ci_hi.to_string(),
                ])?;
            }
            Ok(())
        },
    )?;
    let replications = csv_bytes(
        &["rep", "method", "rmse", "wrmse", "ari", "n_clusters", "converged", "coverage", "max_within_spread"],
        |w| {
            for r in &report.replications {
                w.write_record([
                    r.rep.to_string(),
                    r.method.clone(),
                    r.rmse.to_string(),
                    r.wrmse.to_string(),
                    r.ari.to_string(),
                    r.n_clusters.to_string(),
                    r.converged.to_string(),
                    r.coverage.to_string(),
                    r.max_within_spread.to_string(),
                ])?;
            }
            Ok(())
        },
    )?;
    let summary = SimulationSummary {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION"),
        summaries: &report.summaries,
        failures: &report.failures,
    };
    let mut summary_json = serde_json::to_string_pretty(&summary)?;
    summary_json.push('\n');
    let mut config_json = cfg.recorded().to_json()?;
    config_json.push('\n');
    Ok(vec![
        write_file(&dir.join("records.csv"), &records)?,
        write_file(&dir.join("replications.csv"), &replications)?,
        write_file(&dir.join("summary.json"), summary_json.as_bytes())?,
        write_file(&dir.join("config.json"), config_json.as_bytes())?,
    ])
}

/// A row of `records.csv` as read back by `report`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RecordRow {
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

pub fn read_records(path: &Path) -> Result<Vec<RecordRow>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(file).deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
