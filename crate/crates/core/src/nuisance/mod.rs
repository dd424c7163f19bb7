//! Nuisance learners: conditional means and propensity scores fitted per task.
//!
//! Three learner families are available behind [`NuisanceLearnerSpec`]:
//! gradient-boosted trees (least squares for regression, binomial deviance
//! for propensities), ridge regression and a constant (mean) fit. Fitted
//! models are immutable and record which task rows they were trained on, so
//! fold discipline can be checked after the fact.

mod gbt;
mod ridge;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{ModelKind, RowSelection, TaskDataset};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::RngHandle;

pub use gbt::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    GbtRegressor,
    GbtClassifier,
    Ridge,
    Constant,
}

/// Learner family plus hyperparameters.
///
/// Both boosting kinds select the same machinery: regression targets are fit
/// with squared-error boosting and binary targets with logistic boosting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceLearnerSpec {
    pub kind: LearnerKind,
    pub trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub l2_penalty: f64,
}

impl Default for NuisanceLearnerSpec {
    fn default() -> Self {
        Self {
            kind: LearnerKind::GbtRegressor,
            trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 20,
            l2_penalty: 1.0,
        }
    }
}

impl NuisanceLearnerSpec {
    pub fn constant() -> Self {
        Self {
            kind: LearnerKind::Constant,
            ..Self::default()
        }
    }

    pub fn ridge(l2_penalty: f64) -> Self {
        Self {
            kind: LearnerKind::Ridge,
            l2_penalty,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.trees < 1 {
            return bad(format!("trees must be at least 1, got {}", self.trees));
        }
        if self.max_depth < 1 {
            return bad(format!("max_depth must be at least 1, got {}", self.max_depth));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            ));
        }
        if self.min_leaf < 1 {
            return bad("min_leaf must be at least 1".into());
        }
        if !(self.l2_penalty >= 0.0) {
            return bad(format!("l2_penalty must be >= 0, got {}", self.l2_penalty));
        }
        Ok(())
    }

    fn boost_params(&self) -> gbt::BoostParams {
        gbt::BoostParams {
            trees: self.trees,
            learning_rate: self.learning_rate,
            tree: gbt::TreeParams {
                max_depth: self.max_depth,
                min_leaf: self.min_leaf,
            },
        }
    }
}

/// Anything that maps a covariate row to a real prediction.
pub trait Predictor: Send + Sync {
    fn predict_row(&self, x: &[f64]) -> f64;
}

impl<F> Predictor for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn predict_row(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

/// Predictions of `predictor` on the listed rows of `x`.
pub fn predict_rows(predictor: &dyn Predictor, x: &DenseMatrix, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| predictor.predict_row(x.row(i))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FittedModel {
    Constant(f64),
    Ridge(ridge::RidgeModel),
    Gbt(gbt::GbtModel),
}

/// A fitted nuisance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    model: FittedModel,
    kind: LearnerKind,
    clip_bounds: Option<(f64, f64)>,
    n_features: usize,
    training_rows: Vec<usize>,
    in_sample: Vec<f64>,
}

impl NuisanceFit {
    pub fn kind(&self) -> LearnerKind {
        self.kind
    }

    pub fn clip_bounds(&self) -> Option<(f64, f64)> {
        self.clip_bounds
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Row indices (within the owning task) used for training.
    pub fn training_rows(&self) -> &[usize] {
        &self.training_rows
    }

    /// Predictions on the training rows, in training order.
    pub fn in_sample_predictions(&self) -> &[f64] {
        &self.in_sample
    }

    pub fn n_trees(&self) -> usize {
        match &self.model {
            FittedModel::Gbt(g) => g.n_trees(),
            _ => 0,
        }
    }

    fn raw_predict(&self, x: &[f64]) -> f64 {
        let v = match &self.model {
            FittedModel::Constant(c) => *c,
            FittedModel::Ridge(r) => r.predict(x),
            FittedModel::Gbt(g) => g.predict(x),
        };
        match self.clip_bounds {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }

    fn finish(mut self, x: &DenseMatrix, rows: Vec<usize>) -> Self {
        self.in_sample = (0..x.rows()).map(|i| self.raw_predict(x.row(i))).collect();
        self.training_rows = rows;
        self
    }
}

impl Predictor for NuisanceFit {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.raw_predict(x)
    }
}

pub fn predict(fit: &NuisanceFit, x: &DenseMatrix) -> Result<Vec<f64>> {
    if x.cols() != fit.n_features {
        return Err(Error::DimensionMismatch(format!(
            "model trained on {} covariates, got {}",
            fit.n_features,
            x.cols()
        )));
    }
    Ok((0..x.rows()).map(|i| fit.raw_predict(x.row(i))).collect())
}

fn check_xy(x: &DenseMatrix, y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::EmptyData);
    }
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate rows for {} targets",
            x.rows(),
            y.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn blank(model: FittedModel, kind: LearnerKind, x: &DenseMatrix, clip: Option<(f64, f64)>) -> NuisanceFit {
    NuisanceFit {
        model,
        kind,
        clip_bounds: clip,
        n_features: x.cols(),
        training_rows: Vec::new(),
        in_sample: Vec::new(),
    }
}

/// Fits `E[y | X]`.
///
/// The random handle is accepted for interface stability; none of the
/// shipped learners subsample, so fits are deterministic in the data alone.
pub fn fit_regressor(
    spec: &NuisanceLearnerSpec,
    x: &DenseMatrix,
    y: &[f64],
    _rng: &RngHandle,
) -> Result<NuisanceFit> {
    spec.validate()?;
    check_xy(x, y)?;
    let n = y.len();
    let model = match spec.kind {
        LearnerKind::Constant => FittedModel::Constant(mean(y)),
        LearnerKind::Ridge => FittedModel::Ridge(ridge::RidgeModel::fit(x, y, spec.l2_penalty)?),
        LearnerKind::GbtRegressor | LearnerKind::GbtClassifier => {
            if n < 2 * spec.min_leaf {
                return Err(Error::TooFewObservations {
                    n,
                    required: 2 * spec.min_leaf,
                });
            }
            if y.iter().all(|v| *v == y[0]) {
                warn!("boosting target is constant ({}); the fit is a constant", y[0]);
            }
            FittedModel::Gbt(gbt::fit_least_squares(x, y, spec.boost_params()).0)
        }
    };
    Ok(blank(model, spec.kind, x, None).finish(x, (0..n).collect()))
}

/// Training MSE after each boosting stage (index 0 is the constant fit).
pub fn boosting_loss_path(spec: &NuisanceLearnerSpec, x: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    check_xy(x, y)?;
    Ok(gbt::fit_least_squares(x, y, spec.boost_params()).1)
}

/// Fits a propensity score `P(d = 1 | X)` whose predictions are clipped to
/// `clip = (lo, hi)`.
///
/// A single-class target yields the clipped class frequency with a warning.
pub fn fit_classifier(
    spec: &NuisanceLearnerSpec,
    x: &DenseMatrix,
    d: &[f64],
    clip: (f64, f64),
    _rng: &RngHandle,
) -> Result<NuisanceFit> {
    spec.validate()?;
    check_xy(x, d)?;
    let (lo, hi) = clip;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "clip bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
        )));
    }
    if let Some(v) = d.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidSpec(format!("classifier target {v} is not 0/1")));
    }
    let n = d.len();
    let freq = mean(d);
    let model = if freq == 0.0 || freq == 1.0 {
        warn!("propensity target has a single class; predicting the clipped frequency");
        FittedModel::Constant(freq)
    } else {
        match spec.kind {
            LearnerKind::Constant => FittedModel::Constant(freq),
            LearnerKind::Ridge => {
                FittedModel::Ridge(ridge::RidgeModel::fit(x, d, spec.l2_penalty)?)
            }
            LearnerKind::GbtRegressor | LearnerKind::GbtClassifier => {
                if n < 2 * spec.min_leaf {
                    return Err(Error::TooFewObservations {
                        n,
                        required: 2 * spec.min_leaf,
                    });
                }
                FittedModel::Gbt(gbt::fit_logistic(x, d, spec.boost_params()))
            }
        }
    };
    Ok(blank(model, spec.kind, x, Some(clip)).finish(x, (0..n).collect()))
}

/// The nuisance set of one task under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskNuisances {
    /// `h = E[T | X]`, `m = E[Y | X]`.
    Plm { h: NuisanceFit, m: NuisanceFit },
    /// Propensity plus arm-specific outcome regressions.
    Ate {
        pi: NuisanceFit,
        m1: NuisanceFit,
        m0: NuisanceFit,
    },
    /// Propensity plus `E[ΔY | D = 0, X]`.
    Did { pi: NuisanceFit, m: NuisanceFit },
}

impl TaskNuisances {
    pub fn model(&self) -> ModelKind {
        match self {
            TaskNuisances::Plm { .. } => ModelKind::Plm,
            TaskNuisances::Ate { .. } => ModelKind::Ate,
            TaskNuisances::Did { .. } => ModelKind::Did,
        }
    }

    pub fn get(&self, name: &str) -> Option<&NuisanceFit> {
        self.iter().find(|(n, _)| *n == name).map(|(_, f)| f)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &NuisanceFit)> {
        let v: Vec<(&'static str, &NuisanceFit)> = match self {
            TaskNuisances::Plm { h, m } => vec![("h", h), ("m", m)],
            TaskNuisances::Ate { pi, m1, m0 } => vec![("pi", pi), ("m1", m1), ("m0", m0)],
            TaskNuisances::Did { pi, m } => vec![("pi", pi), ("m", m)],
        };
        v.into_iter()
    }
}

fn fit_on(
    spec: &NuisanceLearnerSpec,
    x: &DenseMatrix,
    y: &[f64],
    rows: &[usize],
    rng: &RngHandle,
) -> Result<NuisanceFit> {
    let xs = x.select_rows(rows);
    let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    let fit = fit_regressor(spec, &xs, &ys, rng)?;
    Ok(NuisanceFit {
        training_rows: rows.to_vec(),
        ..fit
    })
}

fn classify_on(
    spec: &NuisanceLearnerSpec,
    x: &DenseMatrix,
    d: &[f64],
    rows: &[usize],
    clip: (f64, f64),
    rng: &RngHandle,
) -> Result<NuisanceFit> {
    let xs = x.select_rows(rows);
    let ds: Vec<f64> = rows.iter().map(|&i| d[i]).collect();
    let fit = fit_classifier(spec, &xs, &ds, clip, rng)?;
    Ok(NuisanceFit {
        training_rows: rows.to_vec(),
        ..fit
    })
}

/// Fits the nuisance set of `model` using only the rows in `selection`.
pub fn fit_task_nuisances(
    data: &TaskDataset,
    model: ModelKind,
    spec: &NuisanceLearnerSpec,
    selection: RowSelection,
    clip: (f64, f64),
    rng: &RngHandle,
) -> Result<TaskNuisances> {
    data.validate_for(model)?;
    let rows = data.rows(selection)?;
    if rows.is_empty() {
        return Err(Error::EmptyData);
    }
    let x = &data.covariates;
    let d = &data.treatment;
    let arm = |value: f64| -> Vec<usize> { rows.iter().copied().filter(|&i| d[i] == value).collect() };
    match model {
        ModelKind::Plm => {
            let y = data.outcome.response();
            Ok(TaskNuisances::Plm {
                h: fit_on(spec, x, d, &rows, rng)?,
                m: fit_on(spec, x, &y, &rows, rng)?,
            })
        }
        ModelKind::Ate => {
            let y = data.outcome.response();
            let treated = arm(1.0);
            let controls = arm(0.0);
            if treated.is_empty() {
                return Err(Error::NoTreatedRows("m1"));
            }
            if controls.is_empty() {
                return Err(Error::NoControlRows("m0"));
            }
            Ok(TaskNuisances::Ate {
                pi: classify_on(spec, x, d, &rows, clip, rng)?,
                m1: fit_on(spec, x, &y, &treated, rng)?,
                m0: fit_on(spec, x, &y, &controls, rng)?,
            })
        }
        ModelKind::Did => {
            let dy = data.outcome.response();
            let controls = arm(0.0);
            if controls.is_empty() {
                return Err(Error::NoControlRows("m"));
            }
            Ok(TaskNuisances::Did {
                pi: classify_on(spec, x, d, &rows, clip, rng)?,
                m: fit_on(spec, x, &dy, &controls, rng)?,
            })
        }
    }
}
