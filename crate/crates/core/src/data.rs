//! Task datasets, fold bookkeeping and partitions of the task set.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::RngHandle;

/// The semiparametric model a task's data follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Partially linear model: `Y = θ T + g(X) + ε`.
    Plm,
    /// Average treatment effect of a binary treatment under unconfoundedness.
    Ate,
    /// Two-period difference-in-differences with a binary treatment.
    Did,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Plm => "plm",
            ModelKind::Ate => "ate",
            ModelKind::Did => "did",
        }
    }

    pub fn binary_treatment(self) -> bool {
        !matches!(self, ModelKind::Plm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plm" => Ok(ModelKind::Plm),
            "ate" => Ok(ModelKind::Ate),
            "did" => Ok(ModelKind::Did),
            other => Err(Error::InvalidConfig(format!("unknown model `{other}`"))),
        }
    }
}

/// A task-level target parameter θ ∈ ℝᵈ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn scalar(v: f64) -> Self {
        Self(vec![v])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Single(Vec<f64>),
    /// Pre- and post-period outcomes of a two-period panel.
    PrePost { pre: Vec<f64>, post: Vec<f64> },
}

impl Outcome {
    pub fn len(&self) -> usize {
        match self {
            Outcome::Single(y) => y.len(),
            Outcome::PrePost { pre, .. } => pre.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Y` for single-period data, `Y₁ − Y₀` for panels.
    pub fn response(&self) -> Vec<f64> {
        match self {
            Outcome::Single(y) => y.clone(),
            Outcome::PrePost { pre, post } => post.iter().zip(pre).map(|(a, b)| a - b).collect(),
        }
    }
}

/// A partition of `0..n` into folds. Each fold is sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    folds: Vec<Vec<usize>>,
}

impl FoldAssignment {
    /// Random permutation followed by contiguous chunking; the first
    /// `n mod R` folds get one extra row.
    pub fn random(n: usize, folds: usize, rng: &RngHandle) -> Result<Self> {
        if folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 folds, got {folds}"
            )));
        }
        if n < 2 * folds {
            return Err(Error::TooFewObservations {
                n,
                required: 2 * folds,
            });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng.generator());
        let base = n / folds;
        let extra = n % folds;
        let mut out = Vec::with_capacity(folds);
        let mut start = 0;
        for r in 0..folds {
            let size = base + usize::from(r < extra);
            let mut fold = perm[start..start + size].to_vec();
            fold.sort_unstable();
            out.push(fold);
            start += size;
        }
        Ok(Self { folds: out })
    }

    pub fn from_folds(n: usize, folds: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for fold in &folds {
            for &i in fold {
                if i >= n || seen[i] {
                    return Err(Error::InvalidPartition(format!(
                        "row {i} is out of range or assigned twice"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidPartition("folds do not cover every row".into()));
        }
        let folds = folds
            .into_iter()
            .map(|mut f| {
                f.sort_unstable();
                f
            })
            .collect();
        Ok(Self { folds })
    }

    pub fn count(&self) -> usize {
        self.folds.len()
    }

    pub fn fold(&self, r: usize) -> &[usize] {
        &self.folds[r]
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    /// All rows outside fold `r`, sorted.
    pub fn complement(&self, r: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != r)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }
}

/// Which rows of a task an operation may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSelection {
    All,
    Fold(usize),
    /// Every fold except the given one.
    Complement(usize),
}

/// One task's observations plus its fold assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: usize,
    pub outcome: Outcome,
    pub treatment: Vec<f64>,
    pub covariates: DenseMatrix,
    pub split: Option<FoldAssignment>,
}

impl TaskDataset {
    /// Validates column lengths and, for binary-treatment models, the
    /// treatment coding.
    pub fn new(
        task_id: usize,
        outcome: Outcome,
        treatment: Vec<f64>,
        covariates: DenseMatrix,
    ) -> Result<Self> {
        let n = outcome.len();
        if let Outcome::PrePost { pre, post } = &outcome {
            if pre.len() != post.len() {
                return Err(Error::DimensionMismatch(format!(
                    "pre-period has {} rows, post-period {}",
                    pre.len(),
                    post.len()
                )));
            }
        }
        if treatment.len() != n || covariates.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "outcome has {n} rows, treatment {}, covariates {}",
                treatment.len(),
                covariates.rows()
            )));
        }
        if covariates.cols() == 0 {
            return Err(Error::DimensionMismatch(
                "a task needs at least one covariate".into(),
            ));
        }
        Ok(Self {
            task_id,
            outcome,
            treatment,
            covariates,
            split: None,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.cols()
    }

    /// Checks the data are usable under `model`.
    pub fn validate_for(&self, model: ModelKind) -> Result<()> {
        match (model, &self.outcome) {
            (ModelKind::Did, Outcome::Single(_)) => {
                return Err(Error::InvalidConfig(
                    "difference-in-differences needs pre- and post-period outcomes".into(),
                ))
            }
            (ModelKind::Plm | ModelKind::Ate, Outcome::PrePost { .. }) => {
                return Err(Error::InvalidConfig(format!(
                    "model {model} needs a single outcome column"
                )))
            }
            _ => {}
        }
        if model.binary_treatment() {
            if let Some(v) = self.treatment.iter().find(|&&d| d != 0.0 && d != 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "task {}: treatment value {v} is not 0/1",
                    self.task_id
                )));
            }
        }
        Ok(())
    }

    pub fn rows(&self, selection: RowSelection) -> Result<Vec<usize>> {
        match selection {
            RowSelection::All => Ok((0..self.n()).collect()),
            RowSelection::Fold(r) | RowSelection::Complement(r) => {
                let split = self.split.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(format!("task {} has no fold assignment", self.task_id))
                })?;
                if r >= split.count() {
                    return Err(Error::InvalidConfig(format!(
                        "fold {r} does not exist (task has {} folds)",
                        split.count()
                    )));
                }
                Ok(match selection {
                    RowSelection::Fold(_) => split.fold(r).to_vec(),
                    _ => split.complement(r),
                })
            }
        }
    }
}

/// Assigns a uniformly random `folds`-way partition to `data`.
pub fn split_dataset(data: &TaskDataset, folds: usize, rng: &RngHandle) -> Result<TaskDataset> {
    let assignment = FoldAssignment::random(data.n(), folds, rng)?;
    Ok(TaskDataset {
        split: Some(assignment),
        ..data.clone()
    })
}

/// A partition of the task set `0..m` into clusters.
///
/// Stored canonically: each cluster sorted ascending, clusters ordered by
/// their smallest member. Two partitions are equal iff they group the same
/// tasks together.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    clusters: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(m: usize, clusters: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; m];
        for c in &clusters {
            if c.is_empty() {
                return Err(Error::InvalidPartition("empty cluster".into()));
            }
            for &j in c {
                if j >= m || seen[j] {
                    return Err(Error::InvalidPartition(format!(
                        "task {j} is out of range or in two clusters"
                    )));
                }
                seen[j] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidPartition("clusters do not cover every task".into()));
        }
        Ok(Self::canonical(clusters))
    }

    /// Partition induced by a label vector; equal labels share a cluster.
    pub fn from_labels<L: Ord + Clone>(labels: &[L]) -> Self {
        let mut keyed: std::collections::BTreeMap<L, Vec<usize>> = Default::default();
        for (j, l) in labels.iter().enumerate() {
            keyed.entry(l.clone()).or_default().push(j);
        }
        Self::canonical(keyed.into_values().collect())
    }

    pub fn singletons(m: usize) -> Self {
        Self::canonical((0..m).map(|j| vec![j]).collect())
    }

    pub fn single_cluster(m: usize) -> Self {
        Self::canonical(vec![(0..m).collect()])
    }

    fn canonical(mut clusters: Vec<Vec<usize>>) -> Self {
        clusters.retain(|c| !c.is_empty());
        for c in &mut clusters {
            c.sort_unstable();
        }
        clusters.sort_by_key(|c| c[0]);
        Self { clusters }
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn n_tasks(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// Cluster index of every task, numbered in canonical order.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.n_tasks()];
        for (k, c) in self.clusters.iter().enumerate() {
            for &j in c {
                labels[j] = k;
            }
        }
        labels
    }
}
