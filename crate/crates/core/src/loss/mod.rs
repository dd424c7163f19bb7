//! Empirical Neyman-orthogonal losses.
//!
//! Each task contributes a loss `f_j(θ)` built on its evaluation fold from
//! nuisance predictions fitted on a disjoint fold. The three shipped model
//! families all produce losses that are exactly quadratic in θ,
//!
//! ```text
//! f(θ) = θᵀAθ − 2bᵀθ + c,
//! ```
//!
//! and additionally keep the per-observation decomposition needed for
//! sandwich inference. Losses are sums over observations, not means, except
//! the difference-in-differences loss whose normalized weights make it a
//! mean-scale quantity.

mod diagnostic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{ModelKind, RowSelection, TaskDataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd, DenseMatrix};
use crate::nuisance::{predict_rows, Predictor, TaskNuisances};

pub use diagnostic::{orthogonality_diagnostic, perturbation_direction, DiagnosticLoss, NuisanceOracle};

/// Value, gradient and Hessian access to a smooth task loss.
pub trait LossOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64]) -> Vec<f64>;
    fn hessian(&self, theta: &[f64]) -> DenseMatrix;
    /// Observations contributing to the loss.
    fn n_eff(&self) -> usize;
    fn is_convex(&self) -> bool {
        true
    }
    /// The quadratic form of the loss, when it has one.
    fn as_quadratic(&self) -> Option<&QuadraticLoss> {
        None
    }
}

/// `f(θ) = θᵀAθ − 2bᵀθ + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLoss {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub c: f64,
    pub n_eff: usize,
}

impl QuadraticLoss {
    pub fn new(a: DenseMatrix, b: Vec<f64>, c: f64, n_eff: usize) -> Result<Self> {
        if !a.is_square() || a.rows() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "quadratic with {}x{} curvature and {}-vector",
                a.rows(),
                a.cols(),
                b.len()
            )));
        }
        Ok(Self { a, b, c, n_eff })
    }

    /// Scalar loss `a (θ − center)²`.
    pub fn scalar(a: f64, center: f64, n_eff: usize) -> Self {
        Self {
            a: DenseMatrix::from_vec(1, 1, vec![a]).expect("1x1"),
            b: vec![a * center],
            c: a * center * center,
            n_eff,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Unpenalized minimizer `A⁻¹b`.
    pub fn minimizer(&self) -> Result<Vec<f64>> {
        self.check_identified()?;
        solve_spd(&self.a, &self.b).map_err(|_| Error::DegenerateDesign)
    }

    /// Fails with `DegenerateDesign` when the smallest eigenvalue of `A` is
    /// at or below `1e-12 · trace(A) / d`.
    pub fn check_identified(&self) -> Result<()> {
        let d = self.dim() as f64;
        let trace = self.a.trace();
        if !(trace > 0.0) || !self.a.is_finite() {
            return Err(Error::DegenerateDesign);
        }
        let min_eig = self.a.symmetric_eigenvalues()[0];
        if min_eig <= 1e-12 * trace / d {
            return Err(Error::DegenerateDesign);
        }
        Ok(())
    }

    /// Coefficient-wise sum.
    pub fn sum<'a>(losses: impl IntoIterator<Item = &'a QuadraticLoss>) -> Option<Self> {
        let mut it = losses.into_iter();
        let first = it.next()?.clone();
        Some(it.fold(first, |mut acc, q| {
            acc.a.add_scaled(&q.a, 1.0);
            for (x, y) in acc.b.iter_mut().zip(&q.b) {
                *x += y;
            }
            acc.c += q.c;
            acc.n_eff += q.n_eff;
            acc
        }))
    }
}

impl LossOracle for QuadraticLoss {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        dot(theta, &self.a.matvec(theta)) - 2.0 * dot(&self.b, theta) + self.c
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.a
            .matvec(theta)
            .iter()
            .zip(&self.b)
            .map(|(at, b)| 2.0 * (at - b))
            .collect()
    }

    fn hessian(&self, _theta: &[f64]) -> DenseMatrix {
        self.a.scaled(2.0)
    }

    fn n_eff(&self) -> usize {
        self.n_eff
    }

    fn as_quadratic(&self) -> Option<&QuadraticLoss> {
        Some(self)
    }
}

/// Per-observation quadratic pieces `ℓᵢ(θ) = θᵀHᵢθ − 2lᵢᵀθ + cᵢ`.
///
/// Scores are `∇ℓᵢ = 2(Hᵢθ − lᵢ)` and Hessians `2Hᵢ`. The task loss is
/// proportional to `Σᵢ ℓᵢ` (equal for sum-scale losses).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTerms {
    dim: usize,
    curvature: Vec<f64>,
    linear: Vec<f64>,
    constant: Vec<f64>,
}

impl ObservationTerms {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            curvature: Vec::new(),
            linear: Vec::new(),
            constant: Vec::new(),
        }
    }

    pub fn push(&mut self, curvature: &[f64], linear: &[f64], constant: f64) {
        debug_assert_eq!(curvature.len(), self.dim * self.dim);
        debug_assert_eq!(linear.len(), self.dim);
        self.curvature.extend_from_slice(curvature);
        self.linear.extend_from_slice(linear);
        self.constant.push(constant);
    }

    pub fn push_scalar(&mut self, curvature: f64, linear: f64, constant: f64) {
        self.push(&[curvature], &[linear], constant);
    }

    pub fn extend(&mut self, other: &ObservationTerms) {
        assert_eq!(self.dim, other.dim, "observation dimension mismatch");
        self.curvature.extend_from_slice(&other.curvature);
        self.linear.extend_from_slice(&other.linear);
        self.constant.extend_from_slice(&other.constant);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.constant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constant.is_empty()
    }

    fn curvature_of(&self, i: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.curvature[i * dd..(i + 1) * dd]
    }

    fn linear_of(&self, i: usize) -> &[f64] {
        &self.linear[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value(&self, i: usize, theta: &[f64]) -> f64 {
        let h = self.curvature_of(i);
        let d = self.dim;
        let mut quad = 0.0;
        for r in 0..d {
            for s in 0..d {
                quad += theta[r] * h[r * d + s] * theta[s];
            }
        }
        quad - 2.0 * dot(self.linear_of(i), theta) + self.constant[i]
    }

    pub fn score(&self, i: usize, theta: &[f64]) -> Vec<f64> {
        let h = self.curvature_of(i);
        let l = self.linear_of(i);
        let d = self.dim;
        (0..d)
            .map(|r| 2.0 * ((0..d).map(|s| h[r * d + s] * theta[s]).sum::<f64>() - l[r]))
            .collect()
    }

    pub fn hessian(&self, i: usize) -> DenseMatrix {
        DenseMatrix::from_vec(self.dim, self.dim, self.curvature_of(i).to_vec())
            .expect("square block")
            .scaled(2.0)
    }
}

/// Pseudo-outcomes of a task (AIPW responses or DID-transformed outcomes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PseudoOutcome(pub Vec<f64>);

/// A task's orthogonal loss together with its observation-level pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLoss {
    pub model: ModelKind,
    pub quadratic: QuadraticLoss,
    pub observations: ObservationTerms,
    /// `quadratic` equals `obs_scale · Σ ℓᵢ` up to a constant.
    pub obs_scale: f64,
    pub pseudo_outcome: Option<PseudoOutcome>,
}

impl LossOracle for TaskLoss {
    fn dim(&self) -> usize {
        self.quadratic.dim()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.quadratic.value(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.quadratic.gradient(theta)
    }

    fn hessian(&self, theta: &[f64]) -> DenseMatrix {
        self.quadratic.hessian(theta)
    }

    fn n_eff(&self) -> usize {
        self.quadratic.n_eff
    }

    fn as_quadratic(&self) -> Option<&QuadraticLoss> {
        Some(&self.quadratic)
    }
}

/// PLM loss `Σ (Ỹ − θ T̃)²` from residualized outcome and treatment.
pub fn plm_loss_from_residuals(y_resid: &[f64], t_resid: &[f64]) -> Result<TaskLoss> {
    if y_resid.len() != t_resid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} outcome residuals, {} treatment residuals",
            y_resid.len(),
            t_resid.len()
        )));
    }
    let mut obs = ObservationTerms::new(1);
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for (&y, &t) in y_resid.iter().zip(t_resid) {
        a += t * t;
        b += t * y;
        c += y * y;
        obs.push_scalar(t * t, t * y, y * y);
    }
    let quadratic = QuadraticLoss::new(DenseMatrix::from_vec(1, 1, vec![a])?, vec![b], c, y_resid.len())?;
    quadratic.check_identified()?;
    Ok(TaskLoss {
        model: ModelKind::Plm,
        quadratic,
        observations: obs,
        obs_scale: 1.0,
        pseudo_outcome: None,
    })
}

fn check_propensity(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::UnclippedPropensity(p))
    }
}

/// AIPW responses `D(Y − m₁)/π − (1 − D)(Y − m₀)/(1 − π) + m₁ − m₀`.
pub fn aipw_pseudo_outcomes(
    d: &[f64],
    y: &[f64],
    pi: &[f64],
    m1: &[f64],
    m0: &[f64],
) -> Result<PseudoOutcome> {
    let n = d.len();
    if [y.len(), pi.len(), m1.len(), m0.len()].iter().any(|&l| l != n) {
        return Err(Error::DimensionMismatch("AIPW inputs differ in length".into()));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        check_propensity(pi[i])?;
        out.push(
            d[i] * (y[i] - m1[i]) / pi[i] - (1.0 - d[i]) * (y[i] - m0[i]) / (1.0 - pi[i]) + m1[i]
                - m0[i],
        );
    }
    Ok(PseudoOutcome(out))
}

/// ATE loss `Σ (θ − Ŷᵢ)²`.
pub fn ate_loss_from_pseudo(pseudo: PseudoOutcome) -> Result<TaskLoss> {
    let n = pseudo.0.len();
    if n == 0 {
        return Err(Error::DegenerateDesign);
    }
    let mut obs = ObservationTerms::new(1);
    let (mut b, mut c) = (0.0, 0.0);
    for &v in &pseudo.0 {
        b += v;
        c += v * v;
        obs.push_scalar(1.0, v, v * v);
    }
    let quadratic = QuadraticLoss::new(DenseMatrix::from_vec(1, 1, vec![n as f64])?, vec![b], c, n)?;
    Ok(TaskLoss {
        model: ModelKind::Ate,
        quadratic,
        observations: obs,
        obs_scale: 1.0,
        pseudo_outcome: Some(pseudo),
    })
}

/// Inputs of the doubly robust DID loss on one fold.
#[derive(Debug, Clone, Copy)]
pub struct DidFold<'a> {
    pub d: &'a [f64],
    pub pi: &'a [f64],
}

/// Doubly robust DID loss `a (θ − b)²`.
///
/// `weight_fold` supplies `D̄` and `v̄`; on the loss fold the normalized
/// weights are `ŵ₁ = D / D̄` and `ŵ₀ = π̂(1 − D) / ((1 − π̂) v̄)`, and
/// `Âᵢ = (ŵ₁ − ŵ₀)(ΔY − m̂)`, `a = mean ŵ₁`, `b = ΣÂ / Σŵ₁`.
pub fn did_loss_from_parts(
    weight_fold: DidFold<'_>,
    loss_fold: DidFold<'_>,
    delta_y: &[f64],
    m_hat: &[f64],
) -> Result<TaskLoss> {
    let nw = weight_fold.d.len();
    let nl = loss_fold.d.len();
    if weight_fold.pi.len() != nw
        || loss_fold.pi.len() != nl
        || delta_y.len() != nl
        || m_hat.len() != nl
    {
        return Err(Error::DimensionMismatch("DID inputs differ in length".into()));
    }
    if nw == 0 || nl == 0 {
        return Err(Error::EmptyData);
    }
    let control_odds = |d: f64, p: f64| p * (1.0 - d) / (1.0 - p);
    let mut d_bar = 0.0;
    let mut v_bar = 0.0;
    for i in 0..nw {
        check_propensity(weight_fold.pi[i])?;
        d_bar += weight_fold.d[i];
        v_bar += control_odds(weight_fold.d[i], weight_fold.pi[i]);
    }
    d_bar /= nw as f64;
    v_bar /= nw as f64;
    if d_bar <= 0.0 {
        return Err(Error::NoTreatedInWeightFold);
    }
    if v_bar <= 0.0 {
        return Err(Error::ZeroControlMass);
    }
    let mut obs = ObservationTerms::new(1);
    let mut transformed = Vec::with_capacity(nl);
    let (mut sum_w1, mut sum_a) = (0.0, 0.0);
    for i in 0..nl {
        check_propensity(loss_fold.pi[i])?;
        let w1 = loss_fold.d[i] / d_bar;
        let w0 = control_odds(loss_fold.d[i], loss_fold.pi[i]) / v_bar;
        let a_i = (w1 - w0) * (delta_y[i] - m_hat[i]);
        sum_w1 += w1;
        sum_a += a_i;
        transformed.push(a_i);
        obs.push_scalar(w1, a_i, 0.0);
    }
    if sum_w1 <= 0.0 {
        return Err(Error::DegenerateDesign);
    }
    let a = sum_w1 / nl as f64;
    let b = sum_a / sum_w1;
    let quadratic = QuadraticLoss::scalar(a, b, nl);
    quadratic.check_identified()?;
    Ok(TaskLoss {
        model: ModelKind::Did,
        quadratic,
        observations: obs,
        obs_scale: 1.0 / nl as f64,
        pseudo_outcome: Some(PseudoOutcome(transformed)),
    })
}

fn gather(v: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| v[i]).collect()
}

/// PLM loss on `rows` with arbitrary nuisance predictors.
pub fn plm_loss_with(
    data: &TaskDataset,
    h: &dyn Predictor,
    m: &dyn Predictor,
    rows: &[usize],
) -> Result<TaskLoss> {
    let y = data.outcome.response();
    let x = &data.covariates;
    let h_hat = predict_rows(h, x, rows);
    let m_hat = predict_rows(m, x, rows);
    let y_resid: Vec<f64> = rows.iter().zip(&m_hat).map(|(&i, m)| y[i] - m).collect();
    let t_resid: Vec<f64> = rows
        .iter()
        .zip(&h_hat)
        .map(|(&i, h)| data.treatment[i] - h)
        .collect();
    plm_loss_from_residuals(&y_resid, &t_resid)
}

/// ATE loss on `rows` with arbitrary nuisance predictors.
pub fn ate_loss_with(
    data: &TaskDataset,
    pi: &dyn Predictor,
    m1: &dyn Predictor,
    m0: &dyn Predictor,
    rows: &[usize],
) -> Result<TaskLoss> {
    let x = &data.covariates;
    let y = gather(&data.outcome.response(), rows);
    let d = gather(&data.treatment, rows);
    let pseudo = aipw_pseudo_outcomes(
        &d,
        &y,
        &predict_rows(pi, x, rows),
        &predict_rows(m1, x, rows),
        &predict_rows(m0, x, rows),
    )?;
    ate_loss_from_pseudo(pseudo)
}

/// DID loss with weights from `weight_rows` and evaluation on `loss_rows`.
pub fn did_loss_with(
    data: &TaskDataset,
    pi: &dyn Predictor,
    m: &dyn Predictor,
    weight_rows: &[usize],
    loss_rows: &[usize],
) -> Result<TaskLoss> {
    let x = &data.covariates;
    let dy = data.outcome.response();
    let wd = gather(&data.treatment, weight_rows);
    let wpi = predict_rows(pi, x, weight_rows);
    let ld = gather(&data.treatment, loss_rows);
    let lpi = predict_rows(pi, x, loss_rows);
    did_loss_from_parts(
        DidFold { d: &wd, pi: &wpi },
        DidFold { d: &ld, pi: &lpi },
        &gather(&dy, loss_rows),
        &predict_rows(m, x, loss_rows),
    )
}

fn wrong_model(expected: ModelKind, got: &TaskNuisances) -> Error {
    Error::InvalidConfig(format!(
        "expected {expected} nuisances, got {}",
        got.model()
    ))
}

/// `Σ_{i ∈ fold} {(Yᵢ − m̂(Xᵢ)) − θ (Tᵢ − ĥ(Xᵢ))}²`.
pub fn build_plm_loss(data: &TaskDataset, fits: &TaskNuisances, fold: RowSelection) -> Result<TaskLoss> {
    match fits {
        TaskNuisances::Plm { h, m } => plm_loss_with(data, h, m, &data.rows(fold)?),
        other => Err(wrong_model(ModelKind::Plm, other)),
    }
}

/// `Σ_{i ∈ fold} (θ − Ŷᵢ)²` with AIPW pseudo-outcomes `Ŷᵢ`.
pub fn build_ate_loss(data: &TaskDataset, fits: &TaskNuisances, fold: RowSelection) -> Result<TaskLoss> {
    match fits {
        TaskNuisances::Ate { pi, m1, m0 } => ate_loss_with(data, pi, m1, m0, &data.rows(fold)?),
        other => Err(wrong_model(ModelKind::Ate, other)),
    }
}

/// Doubly robust DID loss; `D̄` and `v̄` come from `weight_fold`.
pub fn build_did_loss(
    data: &TaskDataset,
    fits: &TaskNuisances,
    weight_fold: RowSelection,
    loss_fold: RowSelection,
) -> Result<TaskLoss> {
    match fits {
        TaskNuisances::Did { pi, m } => did_loss_with(
            data,
            pi,
            m,
            &data.rows(weight_fold)?,
            &data.rows(loss_fold)?,
        ),
        other => Err(wrong_model(ModelKind::Did, other)),
    }
}

/// Dispatches on the nuisance set's model. `nuisance_rows` are the rows the
/// nuisances were trained on; DID takes its normalizing weights from them.
pub fn build_task_loss(
    data: &TaskDataset,
    fits: &TaskNuisances,
    nuisance_rows: RowSelection,
    loss_rows: RowSelection,
) -> Result<TaskLoss> {
    match fits.model() {
        ModelKind::Plm => build_plm_loss(data, fits, loss_rows),
        ModelKind::Ate => build_ate_loss(data, fits, loss_rows),
        ModelKind::Did => build_did_loss(data, fits, nuisance_rows, loss_rows),
    }
}

/// Averages fold losses: `f̄ = (1/R) Σ_r f⁽ʳ⁾`. Observation terms of all folds
/// are pooled, so every row appears exactly once.
pub fn crossfit_task_losses(folds: Vec<TaskLoss>) -> Result<TaskLoss> {
    let r = folds.len();
    if r < 2 {
        return Err(Error::InvalidConfig(format!(
            "cross-fitting needs at least 2 folds, got {r}"
        )));
    }
    let model = folds[0].model;
    let dim = folds[0].quadratic.dim();
    if folds.iter().any(|f| f.model != model || f.quadratic.dim() != dim) {
        return Err(Error::DimensionMismatch("fold losses disagree in model or dimension".into()));
    }
    let mut sum = QuadraticLoss::sum(folds.iter().map(|f| &f.quadratic)).expect("nonempty");
    let scale = 1.0 / r as f64;
    sum.a = sum.a.scaled(scale);
    sum.b.iter_mut().for_each(|v| *v *= scale);
    sum.c *= scale;
    let mut observations = ObservationTerms::new(dim);
    let mut pseudo = Some(Vec::new());
    for f in &folds {
        observations.extend(&f.observations);
        pseudo = match (pseudo, &f.pseudo_outcome) {
            (Some(mut acc), Some(p)) => {
                acc.extend_from_slice(&p.0);
                Some(acc)
            }
            _ => None,
        };
    }
    let obs_scale = folds.iter().map(|f| f.obs_scale).sum::<f64>() * scale * scale;
    sum.check_identified()?;
    Ok(TaskLoss {
        model,
        quadratic: sum,
        observations,
        obs_scale,
        pseudo_outcome: pseudo.map(PseudoOutcome),
    })
}

/// Cross-fitted average of arbitrary fold oracles.
pub struct CrossFitLoss {
    folds: Vec<Arc<dyn LossOracle>>,
    quadratic: Option<QuadraticLoss>,
    n_eff: usize,
}

/// Averages `R ≥ 2` fold oracles. The result's value, gradient and Hessian
/// are the arithmetic means of the folds'; `n_eff` is the total row count.
pub fn crossfit_loss(folds: Vec<Arc<dyn LossOracle>>) -> Result<CrossFitLoss> {
    let r = folds.len();
    if r < 2 {
        return Err(Error::InvalidConfig(format!(
            "cross-fitting needs at least 2 folds, got {r}"
        )));
    }
    let dim = folds[0].dim();
    if folds.iter().any(|f| f.dim() != dim) {
        return Err(Error::DimensionMismatch("fold losses differ in dimension".into()));
    }
    let quads: Option<Vec<&QuadraticLoss>> = folds.iter().map(|f| f.as_quadratic()).collect();
    let quadratic = quads.map(|qs| {
        let mut q = QuadraticLoss::sum(qs).expect("nonempty");
        let s = 1.0 / r as f64;
        q.a = q.a.scaled(s);
        q.b.iter_mut().for_each(|v| *v *= s);
        q.c *= s;
        q
    });
    let n_eff = folds.iter().map(|f| f.n_eff()).sum();
    Ok(CrossFitLoss {
        folds,
        quadratic,
        n_eff,
    })
}

impl LossOracle for CrossFitLoss {
    fn dim(&self) -> usize {
        self.folds[0].dim()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.folds.iter().map(|f| f.value(theta)).sum::<f64>() / self.folds.len() as f64
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let r = self.folds.len() as f64;
        let mut g = vec![0.0; self.dim()];
        for f in &self.folds {
            for (acc, v) in g.iter_mut().zip(f.gradient(theta)) {
                *acc += v / r;
            }
        }
        g
    }

    fn hessian(&self, theta: &[f64]) -> DenseMatrix {
        let d = self.dim();
        let mut h = DenseMatrix::zeros(d, d);
        for f in &self.folds {
            h.add_scaled(&f.hessian(theta), 1.0 / self.folds.len() as f64);
        }
        h
    }

    fn n_eff(&self) -> usize {
        self.n_eff
    }

    fn is_convex(&self) -> bool {
        self.folds.iter().all(|f| f.is_convex())
    }

    fn as_quadratic(&self) -> Option<&QuadraticLoss> {
        self.quadratic.as_ref()
    }
}

#[cfg(test)]
mod tests;
