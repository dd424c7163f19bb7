use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use orthofuse::nuisance::NuisanceLearnerSpec;
use orthofuse::sim::{draw_replication, DgpConfig};
use orthofuse::{run_pipeline, ModelKind};
use orthofuse_cli::csv_io::{export_mapping, read_task_csv, write_task_csv};
use orthofuse_cli::svg::{histogram, qq_points};
use orthofuse_cli::{emit_svg_diagnostics, CliError, FitReport, RunConfig};
use statrs::distribution::{ContinuousCDF, Normal};
use tempfile::TempDir;

fn orthofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orthofuse"))
        .args(args)
        .env_remove("ORTHOFUSE_THREADS")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three ATE tasks whose treated-minus-control means are 0, 0.01 and 1.
fn toy_ate_csv() -> String {
    let mut s = String::from("task,y,d,x\n");
    for (label, effect) in [("a", 0.0), ("b", 0.01), ("c", 1.0)] {
        for i in 0..40 {
            let base = (i / 2) as f64 * 0.25;
            let d = i % 2;
            let y = base + if d == 1 { effect } else { 0.0 };
            writeln!(s, "{label},{y},{d},{}", i as f64 / 7.0).unwrap();
        }
    }
    s
}

const TOY_CONFIG: &str = r#"{
  "model": "ate",
  "learner": { "kind": "constant" },
  "data_source": { "task_col": "task", "outcome_cols": ["y"], "treatment_col": "d" }
}"#;

#[test]
fn weights_on_the_three_task_toy() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("toy.csv");
    let cfg = dir.path().join("cfg.json");
    fs::write(&data, toy_ate_csv()).unwrap();
    fs::write(&cfg, TOY_CONFIG).unwrap();
    let out = orthofuse(&["weights", "--data", path(&data), "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    // 0.1 · 0.01⁻² = 1000.
    assert_eq!(&rows[0][..2], ["a", "b"]);
    let w: f64 = rows[0][2].parse().unwrap();
    assert!((w - 1000.0).abs() < 1e-6, "{w}");
    assert_eq!(rows[0][3], "adaptive");
    for row in &rows[1..] {
        assert_eq!(row[2].parse::<f64>().unwrap(), 1e-12);
        assert_eq!(row[3], "floor");
    }
}

#[test]
fn unknown_column_exits_with_data_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("toy.csv");
    let cfg = dir.path().join("cfg.json");
    fs::write(&data, toy_ate_csv()).unwrap();
    fs::write(&cfg, TOY_CONFIG.replace(r#""treatment_col": "d""#, r#""treatment_col": "treated""#)).unwrap();
    let out = orthofuse(&["fit", "--data", path(&data), "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("`treated`"), "{err}");
}

#[test]
fn na_cell_exits_with_data_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("toy.csv");
    let cfg = dir.path().join("cfg.json");
    fs::write(&data, toy_ate_csv().replacen("b,0,0,", "b,NA,0,", 1)).unwrap();
    fs::write(&cfg, TOY_CONFIG).unwrap();
    let out = orthofuse(&["fit", "--data", path(&data), "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("\"NA\"") && err.contains("row 41") && err.contains("`y`"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(orthofuse(&[]).status.code(), Some(1));
    assert_eq!(orthofuse(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(orthofuse(&["simulate", "--model", "iv"]).status.code(), Some(1));
    assert_eq!(orthofuse(&["fit"]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"mode": "fit"}"#).unwrap();
    assert_eq!(orthofuse(&["simulate", "--config", path(&cfg)]).status.code(), Some(1));
    fs::write(&cfg, r#"{"seed": "zero"}"#).unwrap();
    assert_eq!(orthofuse(&["simulate", "--config", path(&cfg)]).status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_orthofuse"))
        .args(["report"])
        .env("ORTHOFUSE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(orthofuse(&["--help"]).status.code(), Some(0));
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(CliError::Model(orthofuse::Error::SingularSystem).exit_code(), 3);
    assert_eq!(CliError::Model(orthofuse::Error::InvalidConfig("x".into())).exit_code(), 1);
    assert_eq!(CliError::Model(orthofuse::Error::EmptyData).exit_code(), 2);
}

const SMALL_STUDY: &str = r#"{
  "dgp": { "m": 4, "k": 2, "n0": 120, "p0": 2, "p_step": 0 },
  "learner": { "kind": "ridge" },
  "methods": [ { "kind": "adaptive" }, { "kind": "personalized" } ],
  "reps": 6
}"#;

#[test]
fn simulate_then_report() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL_STUDY).unwrap();
    let sim = dir.path().join("sim");
    let out = orthofuse(&["simulate", "--config", path(&cfg), "--seed", "3", "--out", path(&sim)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let records = fs::read_to_string(sim.join("records.csv")).unwrap();
    assert!(records.starts_with("rep,method,task,cluster_true,cluster_est,theta_true,theta_hat,se"));
    assert_eq!(records.lines().count(), 1 + 6 * 2 * 4);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(sim.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summaries"].as_array().unwrap().len(), 2);
    assert_eq!(summary["summaries"][0]["method"], "adaptive");
    let saved: RunConfig = serde_json::from_str(&fs::read_to_string(sim.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved.seed, 3);

    let rep = dir.path().join("rep");
    let out = orthofuse(&["report", "--data", path(&sim), "--out", path(&rep)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["qq.csv", "qq.svg", "hist.csv", "hist.svg", "report.json"] {
        assert!(rep.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_to_string(rep.join("qq.csv")).unwrap().lines().count(), 1 + 24);
}

#[test]
fn simulate_is_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL_STUDY).unwrap();
    let run = |name: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let out = Command::new(env!("CARGO_BIN_EXE_orthofuse"))
            .args(["simulate", "--config", path(&cfg), "--out", path(&out_dir)])
            .env("ORTHOFUSE_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        out_dir
    };
    let (a, b) = (run("a", "1"), run("b", "3"));
    for f in ["records.csv", "replications.csv", "summary.json", "config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn fit_on_exported_csv_matches_in_memory_pipeline() {
    let dgp = DgpConfig {
        m: 5,
        k: 2,
        n0: 150,
        ..DgpConfig::default()
    };
    let (_, tasks) = draw_replication(&dgp, 11, 0).unwrap();
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("sim.csv");
    write_task_csv(fs::File::create(&data).unwrap(), &tasks).unwrap();

    let table = read_task_csv(&data, &export_mapping(ModelKind::Plm), ModelKind::Plm).unwrap();
    assert_eq!(table.tasks, tasks);

    let cfg = RunConfig {
        learner: NuisanceLearnerSpec::ridge(1.0),
        seed: 4,
        ..RunConfig::default()
    };
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let out_dir = dir.path().join("fit");
    let out = orthofuse(&["fit", "--data", path(&data), "--config", path(&cfg_path), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = FitReport::read(&out_dir.join("fit_report.json")).unwrap();

    let direct = run_pipeline(&tasks, &cfg.pipeline(), cfg.seed).unwrap();
    for (t, est) in report.tasks.iter().zip(&direct.estimates) {
        assert_eq!(t.theta_hat, est.0);
    }
    assert_eq!(report.clusters, direct.inference);

    let rep = dir.path().join("rep");
    let out = orthofuse(&["report", "--data", path(&out_dir), "--out", path(&rep)]);
    // Five tasks are too few for a QQ plot.
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 10"));
}

#[test]
fn did_fit_reads_two_outcome_columns() {
    let dgp = DgpConfig {
        model: ModelKind::Did,
        m: 3,
        k: 1,
        n0: 300,
        ..DgpConfig::default()
    };
    let (_, tasks) = draw_replication(&dgp, 2, 0).unwrap();
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("did.csv");
    write_task_csv(fs::File::create(&data).unwrap(), &tasks).unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"model": "did", "learner": {"kind": "ridge"}, "data_source": {"outcome_cols": ["y0", "y1"]}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("fit");
    let out = orthofuse(&["fit", "--data", path(&data), "--config", path(&cfg), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let clusters = fs::read_to_string(out_dir.join("clusters.csv")).unwrap();
    assert!(clusters.starts_with("cluster_id,members,n_k,estimate,se,ci_lo,ci_hi,level\n"));
}

fn assert_self_contained_svg(text: &str) {
    let doc = roxmltree::Document::parse(text).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    for node in doc.descendants().filter(|n| n.is_element()) {
        assert!(!matches!(node.tag_name().name(), "image" | "script" | "use" | "foreignObject" | "style"));
        for attr in node.attributes() {
            assert!(!attr.name().contains("href"), "{}", attr.name());
            assert!(!attr.value().contains("url("), "{}", attr.value());
        }
    }
}

#[test]
fn qq_of_exact_normal_quantiles_lies_on_the_diagonal() {
    let normal = Normal::standard();
    let values: Vec<f64> = (1..=100).map(|i| normal.inverse_cdf((i as f64 - 0.5) / 100.0)).collect();
    let points = qq_points(&values).unwrap();
    for p in &points {
        assert!((p.empirical - p.theoretical).abs() < 1e-8);
        assert!(p.band_lo <= p.empirical && p.empirical <= p.band_hi);
    }
    let dir = TempDir::new().unwrap();
    let files = emit_svg_diagnostics(&values, &values, dir.path()).unwrap();
    assert_eq!(files.len(), 4);
    for f in files.iter().filter(|f| f.extension().unwrap() == "svg") {
        assert_self_contained_svg(&fs::read_to_string(f).unwrap());
    }
}

#[test]
fn constant_histogram_has_one_occupied_bin() {
    let bins = histogram(&[2.5; 30]).unwrap();
    assert_eq!(bins.iter().filter(|b| b.count > 0).count(), 1);
    assert_eq!(bins[0].count, 30);
    assert!(bins[0].lo < 2.5 && 2.5 < bins[0].hi);
    let dir = TempDir::new().unwrap();
    let z: Vec<f64> = (0..12).map(|i| i as f64).collect();
    emit_svg_diagnostics(&z, &[2.5; 30], dir.path()).unwrap();
    assert_self_contained_svg(&fs::read_to_string(dir.path().join("hist.svg")).unwrap());
}

#[test]
fn qq_needs_ten_points() {
    let dir = TempDir::new().unwrap();
    let err = emit_svg_diagnostics(&[0.0; 9], &[0.0; 9], dir.path()).unwrap_err();
    assert!(matches!(err, CliError::TooFewPoints { needed: 10, got: 9 }));
    assert_eq!(err.exit_code(), 2);
}
