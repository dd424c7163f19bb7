//! Reading task data from CSV and writing it back.
//!
//! Input is an RFC 4180 CSV with a header row. Numbers use `.` as decimal
//! separator and no thousands separators. Rows are grouped by the task column
//! in order of first appearance; task `j` in the result is the `j`-th distinct
//! label seen.
//!
//! A covariate column that is empty on every row of a task is dropped for
//! that task, which lets tasks with different covariate counts share one
//! file. Any other empty or non-numeric cell is an error.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use orthofuse::linalg::DenseMatrix;
use orthofuse::{ModelKind, Outcome, TaskDataset};

use crate::config::DataSource;
use crate::error::{CliError, Result};

/// Tasks read from a CSV together with their original labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTable {
    pub labels: Vec<String>,
    pub tasks: Vec<TaskDataset>,
}

struct Columns {
    task: usize,
    outcomes: Vec<usize>,
    treatment: usize,
    covariates: Vec<(usize, String)>,
}

fn locate(header: &csv::StringRecord, mapping: &DataSource) -> Result<Columns> {
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))
    };
    let task = find(&mapping.task_col)?;
    let outcomes = mapping.outcome_cols.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let treatment = find(&mapping.treatment_col)?;
    let covariates = if mapping.covariate_cols.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != task && *i != treatment && !outcomes.contains(i))
            .map(|(i, h)| (i, h.to_string()))
            .collect()
    } else {
        mapping
            .covariate_cols
            .iter()
            .map(|c| find(c).map(|i| (i, c.clone())))
            .collect::<Result<Vec<_>>>()?
    };
    if covariates.is_empty() {
        return Err(CliError::Data("no covariate columns".into()));
    }
    Ok(Columns {
        task,
        outcomes,
        treatment,
        covariates,
    })
}

fn parse_cell(value: &str, row: usize, column: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::NonNumericCell {
            row,
            column: column.to_string(),
            value: value.to_string(),
        })
}

#[derive(Default)]
struct Group {
    /// 1-based data row numbers, for error messages.
    rows: Vec<usize>,
    outcomes: Vec<Vec<f64>>,
    treatment: Vec<f64>,
    /// Raw covariate cells; parsed once the task's column set is known.
    covariates: Vec<Vec<String>>,
}

/// Reads and groups a task CSV according to `mapping`.
pub fn read_task_csv(path: &Path, mapping: &DataSource, model: ModelKind) -> Result<TaskTable> {
    let expected = if model == ModelKind::Did { 2 } else { 1 };
    if mapping.outcome_cols.len() != expected {
        return Err(CliError::Usage(format!(
            "{model} needs {expected} outcome column(s), got {}",
            mapping.outcome_cols.len()
        )));
    }
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers()?.clone();
    let cols = locate(&header, mapping)?;

    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let label = record.get(cols.task).unwrap_or_default().to_string();
        let g = *index.entry(label.clone()).or_insert_with(|| {
            labels.push(label.clone());
            groups.push(Group {
                outcomes: vec![Vec::new(); cols.outcomes.len()],
                ..Group::default()
            });
            groups.len() - 1
        });
        let group = &mut groups[g];
        group.rows.push(row);
        for (slot, (&c, name)) in cols.outcomes.iter().zip(&mapping.outcome_cols).enumerate() {
            group.outcomes[slot].push(parse_cell(record.get(c).unwrap_or_default(), row, name)?);
        }
        group.treatment.push(parse_cell(
            record.get(cols.treatment).unwrap_or_default(),
            row,
            &mapping.treatment_col,
        )?);
        group
            .covariates
            .push(cols.covariates.iter().map(|(c, _)| record.get(*c).unwrap_or_default().to_string()).collect());
    }
    if groups.is_empty() {
        return Err(CliError::Data(format!("{} has no data rows", path.display())));
    }

    let small: Vec<String> = labels
        .iter()
        .zip(&groups)
        .filter(|(_, g)| g.rows.len() < mapping.min_task_rows)
        .map(|(l, g)| format!("{l} (n={})", g.rows.len()))
        .collect();
    if !small.is_empty() {
        return Err(CliError::TooSmallTask {
            min: mapping.min_task_rows,
            listing: small.join(", "),
        });
    }

    let mut tasks = Vec::with_capacity(groups.len());
    for (j, group) in groups.into_iter().enumerate() {
        let present: Vec<usize> = (0..cols.covariates.len())
            .filter(|&c| group.covariates.iter().any(|r| !r[c].trim().is_empty()))
            .collect();
        let mut x = DenseMatrix::zeros(group.rows.len(), present.len());
        for (i, cells) in group.covariates.iter().enumerate() {
            for (slot, &c) in present.iter().enumerate() {
                x[(i, slot)] = parse_cell(&cells[c], group.rows[i], &cols.covariates[c].1)?;
            }
        }
        let mut outcomes = group.outcomes.into_iter();
        let outcome = match model {
            ModelKind::Did => {
                let pre = outcomes.next().unwrap_or_default();
                let post = outcomes.next().unwrap_or_default();
                Outcome::PrePost { pre, post }
            }
            _ => Outcome::Single(outcomes.next().unwrap_or_default()),
        };
        let task = TaskDataset::new(j, outcome, group.treatment, x).map_err(|e| CliError::Data(format!("task {}: {e}", labels[j])))?;
        task.validate_for(model).map_err(|e| CliError::Data(format!("task {}: {e}", labels[j])))?;
        tasks.push(task);
    }
    Ok(TaskTable { labels, tasks })
}

/// The column mapping that [`write_task_csv`] produces for `model`.
pub fn export_mapping(model: ModelKind) -> DataSource {
    DataSource {
        outcome_cols: match model {
            ModelKind::Did => vec!["y0".into(), "y1".into()],
            _ => vec!["y".into()],
        },
        ..DataSource::default()
    }
}

/// Writes tasks in long format: `task, y | y0,y1, t, x0, x1, ...`.
///
/// Tasks with fewer covariates than the widest task leave the extra cells
/// empty. Values are written in shortest round-trip form, so reading the file
/// back reproduces every number exactly.
pub fn write_task_csv<W: Write>(out: W, tasks: &[TaskDataset]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let width = tasks.iter().map(|t| t.p()).max().unwrap_or(0);
    let did = tasks.iter().any(|t| matches!(t.outcome, Outcome::PrePost { .. }));
    let mut header: Vec<String> = vec!["task".into()];
    if did {
        header.extend(["y0".into(), "y1".into()]);
    } else {
        header.push("y".into());
    }
    header.push("t".into());
    header.extend((0..width).map(|c| format!("x{c}")));
    w.write_record(&header)?;
    for (j, task) in tasks.iter().enumerate() {
        for i in 0..task.n() {
            let mut row = vec![j.to_string()];
            match &task.outcome {
                Outcome::Single(y) => row.push(y[i].to_string()),
                Outcome::PrePost { pre, post } => {
                    row.push(pre[i].to_string());
                    row.push(post[i].to_string());
                }
            }
            row.push(task.treatment[i].to_string());
            row.extend((0..width).map(|c| {
                if c < task.p() {
                    task.covariates[(i, c)].to_string()
                } else {
                    String::new()
                }
            }));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| CliError::io("<csv output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn mapping() -> DataSource {
        DataSource {
            task_col: "state".into(),
            outcome_cols: vec!["y".into()],
            treatment_col: "d".into(),
            ..DataSource::default()
        }
    }

    fn two_states(n: usize) -> String {
        let mut s = String::from("state,y,d,x1,x2\n");
        for state in ["CA", "TX"] {
            for i in 0..n {
                s.push_str(&format!("{state},{}.5,{},{},{}\n", i, i % 2, i * 3, -(i as i64)));
            }
        }
        s
    }

    #[test]
    fn groups_by_task_column() {
        let f = write(&two_states(50));
        let table = read_task_csv(f.path(), &mapping(), ModelKind::Ate).unwrap();
        assert_eq!(table.labels, vec!["CA", "TX"]);
        assert_eq!(table.tasks.len(), 2);
        for (j, t) in table.tasks.iter().enumerate() {
            assert_eq!(t.task_id, j);
            assert_eq!(t.n(), 50);
            assert_eq!(t.p(), 2);
        }
        assert_eq!(table.tasks[1].covariates[(3, 0)], 9.0);
        assert_eq!(table.tasks[1].outcome.response()[3], 3.5);
    }

    #[test]
    fn unknown_column_is_named() {
        let f = write(&two_states(30));
        let m = DataSource {
            treatment_col: "treated".into(),
            ..mapping()
        };
        let err = read_task_csv(f.path(), &m, ModelKind::Ate).unwrap_err();
        assert!(matches!(&err, CliError::MissingColumn(c) if c == "treated"));
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("treated"));
    }

    #[test]
    fn na_cell_reports_row_and_column() {
        let mut text = two_states(30);
        text = text.replacen("CA,2.5,0,6,-2", "CA,2.5,0,NA,-2", 1);
        let f = write(&text);
        let err = read_task_csv(f.path(), &mapping(), ModelKind::Ate).unwrap_err();
        match err {
            CliError::NonNumericCell { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (3, "x1", "NA"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn small_tasks_are_listed() {
        let mut text = two_states(30);
        text.push_str("NV,1,1,1,1\nNV,2,0,2,2\n");
        let f = write(&text);
        let err = read_task_csv(f.path(), &mapping(), ModelKind::Ate).unwrap_err();
        assert!(matches!(&err, CliError::TooSmallTask { min: 20, listing } if listing == "NV (n=2)"));
    }

    #[test]
    fn did_requires_two_outcomes() {
        let f = write(&two_states(30));
        let err = read_task_csv(f.path(), &mapping(), ModelKind::Did).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let text = two_states(30).replace("state,y,d,x1,x2", "state,y,d,y1,x2");
        let f = write(&text);
        let m = DataSource {
            outcome_cols: vec!["y".into(), "y1".into()],
            ..mapping()
        };
        let table = read_task_csv(f.path(), &m, ModelKind::Did).unwrap();
        assert!(matches!(table.tasks[0].outcome, Outcome::PrePost { .. }));
        assert_eq!(table.tasks[0].p(), 1);
    }

    #[test]
    fn explicit_covariates_select_columns() {
        let f = write(&two_states(25));
        let m = DataSource {
            covariate_cols: vec!["x2".into()],
            ..mapping()
        };
        let table = read_task_csv(f.path(), &m, ModelKind::Plm).unwrap();
        assert_eq!(table.tasks[0].p(), 1);
        assert_eq!(table.tasks[0].covariates[(4, 0)], -4.0);
    }

    #[test]
    fn export_round_trips_ragged_tasks() {
        let a = TaskDataset::new(
            0,
            Outcome::Single(vec![0.1, 1.0 / 3.0]),
            vec![1.0, 0.0],
            DenseMatrix::from_rows(&[vec![1e-17, 2.0], vec![3.0, -4.5]]).unwrap(),
        )
        .unwrap();
        let b = TaskDataset::new(
            1,
            Outcome::Single(vec![5.0, 6.0]),
            vec![0.0, 1.0],
            DenseMatrix::from_rows(&[vec![std::f64::consts::PI], vec![7.0]]).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_task_csv(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let f = write(std::str::from_utf8(&buf).unwrap());
        let m = DataSource {
            min_task_rows: 1,
            ..export_mapping(ModelKind::Ate)
        };
        let table = read_task_csv(f.path(), &m, ModelKind::Ate).unwrap();
        assert_eq!(table.tasks, vec![a, b]);
    }
}
