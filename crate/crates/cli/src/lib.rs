//! Command-line front end for `orthofuse`.
//!
//! ```text
//! orthofuse simulate --config cfg.json [--reps N] [--seed S] [--out DIR]
//! orthofuse fit      --data data.csv --config cfg.json [--out DIR]
//! orthofuse weights  --data data.csv --config cfg.json [--out DIR]
//! orthofuse report   --data DIR [--out DIR]
//! ```
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! `ORTHOFUSE_THREADS` caps the worker pool.

pub mod config;
pub mod csv_io;
pub mod error;
pub mod report;
pub mod svg;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use orthofuse::pipeline::adaptive_penalties;
use orthofuse::sim::{mean, run_monte_carlo};
use orthofuse::{estimate, prepare, ModelKind};
use serde::Serialize;

pub use config::{DataSource, Mode, RunConfig};
pub use csv_io::{read_task_csv, write_task_csv, TaskTable};
pub use error::{CliError, Result};
pub use report::FitReport;
pub use svg::emit_svg_diagnostics;

#[derive(Debug, Parser)]
#[command(name = "orthofuse", version, about = "Adaptive orthogonal multitask estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo study.
    Simulate(Common),
    /// Fit the adaptive estimator to task data in a CSV file.
    Fit(Common),
    /// Print the adaptive penalty matrix with provenance.
    Weights(Common),
    /// Render tables and diagnostics from a previous `fit` or `simulate`.
    Report(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV file (`fit`, `weights`) or output directory (`report`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    refit: bool,
    #[arg(long)]
    crossfit: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
}

const DEFAULT_OUT: &str = "orthofuse-out";

impl Common {
    fn resolve(&self, mode: Mode) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.resolve_mode(mode)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if self.refit {
            cfg.refit = true;
        }
        if let Some(r) = self.crossfit {
            cfg.crossfit = r;
        }
        if let Some(l) = self.level {
            cfg.level = l;
        }
        if let Some(d) = &self.data {
            if mode != Mode::InferReport {
                cfg.data_source.path = Some(d.clone());
            }
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn data_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.data_source
        .path
        .as_deref()
        .ok_or_else(|| CliError::Usage("no data file: pass --data or set data_source.path".into()))
}

fn announce(out: &mut (dyn Write + Send), paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        writeln!(out, "wrote {}", p.display()).map_err(|e| CliError::io("<stdout>", e))?;
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    let report = run_monte_carlo(&cfg.monte_carlo(), cfg.seed)?;
    let paths = report::write_simulation_outputs(&out_dir(cfg), cfg, &report)?;
    for s in &report.summaries {
        writeln!(
            out,
            "{}: rmse {:.4} wrmse {:.4} ari {:.3} coverage {:.3}",
            s.method, s.rmse_mean, s.wrmse_mean, s.ari_median, s.coverage
        )
        .map_err(|e| CliError::io("<stdout>", e))?;
    }
    announce(out, &paths)
}

fn load_tasks(cfg: &RunConfig) -> Result<TaskTable> {
    read_task_csv(data_path(cfg)?, &cfg.data_source, cfg.model)
}

fn fit(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    let table = load_tasks(cfg)?;
    let pipeline = cfg.pipeline();
    let prepared = prepare(&table.tasks, &pipeline, cfg.seed, 0, true)?;
    let penalties = adaptive_penalties(&prepared, &pipeline)?;
    let result = estimate(&prepared, penalties, &pipeline)?;
    let sizes: Vec<usize> = table.tasks.iter().map(|t| t.n()).collect();
    let report = FitReport::new(cfg, &table.labels, &sizes, &result)?;
    let paths = report::write_fit_outputs(&out_dir(cfg), &report, &result.penalties)?;
    writeln!(
        out,
        "{} tasks in {} clusters (converged: {})",
        report.tasks.len(),
        report.clusters.len(),
        report.metadata.converged
    )
    .map_err(|e| CliError::io("<stdout>", e))?;
    announce(out, &paths)
}

fn weights(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    let table = load_tasks(cfg)?;
    let pipeline = cfg.pipeline();
    let prepared = prepare(&table.tasks, &pipeline, cfg.seed, 0, true)?;
    let penalties = adaptive_penalties(&prepared, &pipeline)?;
    let bytes = report::penalties_csv(&penalties, &table.labels)?;
    out.write_all(&bytes).map_err(|e| CliError::io("<stdout>", e))?;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("penalties.csv");
        std::fs::write(&path, &bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportSummary {
    source: String,
    method: Option<String>,
    n_estimates: usize,
    n_standardized: usize,
    z_mean: f64,
    z_sd: f64,
    coverage: Option<f64>,
}

fn sd(values: &[f64]) -> f64 {
    let mu = mean(values);
    let n = values.len() as f64;
    (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Diagnostics from a simulation: the adaptive method's records if present,
/// otherwise the first method's. QQ data are `(θ̂ − θ*)/se`.
fn report_simulation(records_path: &Path, dir: &Path) -> Result<(ReportSummary, Vec<PathBuf>)> {
    let rows = report::read_records(records_path)?;
    let method = rows
        .iter()
        .find(|r| r.method == "adaptive")
        .or_else(|| rows.first())
        .map(|r| r.method.clone())
        .ok_or_else(|| CliError::Data(format!("{} has no records", records_path.display())))?;
    let chosen: Vec<_> = rows.iter().filter(|r| r.method == method).collect();
    let estimates: Vec<f64> = chosen.iter().map(|r| r.theta_hat).collect();
    let z: Vec<f64> = chosen
        .iter()
        .filter(|r| r.se > 0.0)
        .map(|r| (r.theta_hat - r.theta_true) / r.se)
        .collect();
    let covered = chosen.iter().filter(|r| r.ci_lo <= r.theta_true && r.theta_true <= r.ci_hi).count();
    let paths = emit_svg_diagnostics(&z, &estimates, dir)?;
    Ok((
        ReportSummary {
            source: "simulation".into(),
            method: Some(method),
            n_estimates: estimates.len(),
            n_standardized: z.len(),
            z_mean: mean(&z),
            z_sd: sd(&z),
            coverage: Some(covered as f64 / chosen.len() as f64),
        },
        paths,
    ))
}

/// Diagnostics from a fit: the task estimates (first component), with QQ
/// data from the estimates centred and scaled across tasks.
fn report_fit(report_path: &Path, dir: &Path) -> Result<(ReportSummary, Vec<PathBuf>)> {
    let fit = FitReport::read(report_path)?;
    let estimates: Vec<f64> = fit.tasks.iter().map(|t| t.theta_hat[0]).collect();
    let (mu, s) = (mean(&estimates), sd(&estimates));
    if !(s > 0.0) {
        return Err(CliError::Data("task estimates have no spread to standardize".into()));
    }
    let z: Vec<f64> = estimates.iter().map(|v| (v - mu) / s).collect();
    let mut paths = emit_svg_diagnostics(&z, &estimates, dir)?;
    for (name, bytes) in [("tasks.csv", report::tasks_csv(&fit)?), ("clusters.csv", report::clusters_csv(&fit)?)] {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        paths.push(path);
    }
    Ok((
        ReportSummary {
            source: "fit".into(),
            method: None,
            n_estimates: estimates.len(),
            n_standardized: z.len(),
            z_mean: mean(&z),
            z_sd: sd(&z),
            coverage: None,
        },
        paths,
    ))
}

fn render_report(input: &Path, cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<()> {
    let dir = out_dir(cfg);
    let (summary, mut paths) = if input.join("records.csv").is_file() {
        report_simulation(&input.join("records.csv"), &dir)?
    } else if input.join("fit_report.json").is_file() {
        report_fit(&input.join("fit_report.json"), &dir)?
    } else {
        return Err(CliError::Data(format!(
            "{} holds neither records.csv nor fit_report.json",
            input.display()
        )));
    };
    let path = dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
    paths.push(path);
    announce(out, &paths)
}

fn dispatch(cli: Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => simulate(&c.resolve(Mode::Simulate)?, out),
        Command::Fit(c) => fit(&c.resolve(Mode::Fit)?, out),
        Command::Weights(c) => weights(&c.resolve(Mode::Fit)?, out),
        Command::Report(c) => {
            let cfg = c.resolve(Mode::InferReport)?;
            let input = c
                .data
                .clone()
                .ok_or_else(|| CliError::Usage("report needs --data DIR".into()))?;
            render_report(&input, &cfg, out)
        }
    }
}

fn thread_pool() -> Result<Option<rayon::ThreadPool>> {
    let Ok(raw) = std::env::var("ORTHOFUSE_THREADS") else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("ORTHOFUSE_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| CliError::Usage(e.to_string()))
}

/// Runs the CLI on `args` (including the program name), writing normal
/// output to `out` and a one-line diagnostic to standard error on failure.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let line = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error");
            eprintln!("{line}");
            return 1;
        }
    };
    let result = match thread_pool() {
        Ok(Some(pool)) => pool.install(|| dispatch(cli, out)),
        Ok(None) => dispatch(cli, out),
        Err(e) => Err(e),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point used by the binary.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(args, &mut std::io::stdout())
}
