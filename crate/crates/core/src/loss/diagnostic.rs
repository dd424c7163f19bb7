//! Numerical Neyman-orthogonality check.
//!
//! On synthetic data where the true nuisances are known, every nuisance
//! prediction is shifted by `ε·h(x)` with the fixed bounded direction
//! `h(x) = tanh(Σ_r x_r)`, and the change in the θ-gradient at the true θ is
//! measured:
//!
//! ```text
//! D(ε) = ‖∇f(θ*; η* + ε h) − ∇f(θ*; η*)‖ / (ε · n_eff)
//! ```
//!
//! For an orthogonal loss the first-order term has mean zero, so `D(ε)` is
//! of order `ε` plus `O(n^{-1/2})` sampling noise. For a plug-in loss it
//! stays bounded away from zero.

use crate::data::{ModelKind, RowSelection, TaskDataset};
use crate::error::{Error, Result};
use crate::linalg::{norm2, sub};
use crate::nuisance::Predictor;

use super::{ate_loss_with, did_loss_with, plm_loss_from_residuals, plm_loss_with, LossOracle, TaskLoss};

/// Which loss to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticLoss {
    /// The model's orthogonal loss; all of its nuisances are perturbed.
    Orthogonal,
    /// Non-orthogonal PLM plug-in loss `Σ (Y − ĝ(X) − θT)²` with
    /// `g = E[Y − θ*T | X]`; only `ĝ` is perturbed.
    PlugInPlm,
}

/// True nuisance functions of a synthetic task.
///
/// Names follow [`crate::nuisance::TaskNuisances`]: `h`, `m` (PLM), `pi`,
/// `m1`, `m0` (ATE), `pi`, `m` (DID), plus `g` for the PLM plug-in loss.
pub trait NuisanceOracle: Sync {
    fn model(&self) -> ModelKind;
    fn theta(&self) -> Vec<f64>;
    fn nuisance(&self, name: &str) -> Option<Box<dyn Predictor + '_>>;
}

/// The perturbation direction `tanh(Σ_r x_r)`.
pub fn perturbation_direction(x: &[f64]) -> f64 {
    x.iter().sum::<f64>().tanh()
}

struct Shifted<'a> {
    base: Box<dyn Predictor + 'a>,
    epsilon: f64,
    bounds: Option<(f64, f64)>,
}

impl Predictor for Shifted<'_> {
    fn predict_row(&self, x: &[f64]) -> f64 {
        let v = self.base.predict_row(x) + self.epsilon * perturbation_direction(x);
        match self.bounds {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }
}

fn loss_at(
    kind: DiagnosticLoss,
    data: &TaskDataset,
    truth: &dyn NuisanceOracle,
    rows: &[usize],
    epsilon: f64,
) -> Result<TaskLoss> {
    let get = |name: &str| -> Result<Shifted<'_>> {
        let base = truth.nuisance(name).ok_or(Error::RequiresTruth)?;
        let bounds = (name == "pi").then_some((1e-3, 1.0 - 1e-3));
        Ok(Shifted {
            base,
            epsilon,
            bounds,
        })
    };
    match (kind, truth.model()) {
        (DiagnosticLoss::Orthogonal, ModelKind::Plm) => {
            plm_loss_with(data, &get("h")?, &get("m")?, rows)
        }
        (DiagnosticLoss::Orthogonal, ModelKind::Ate) => {
            ate_loss_with(data, &get("pi")?, &get("m1")?, &get("m0")?, rows)
        }
        (DiagnosticLoss::Orthogonal, ModelKind::Did) => {
            did_loss_with(data, &get("pi")?, &get("m")?, rows, rows)
        }
        (DiagnosticLoss::PlugInPlm, ModelKind::Plm) => {
            let g = get("g")?;
            let y = data.outcome.response();
            let resid: Vec<f64> = rows
                .iter()
                .map(|&i| y[i] - g.predict_row(data.covariates.row(i)))
                .collect();
            let t: Vec<f64> = rows.iter().map(|&i| data.treatment[i]).collect();
            plm_loss_from_residuals(&resid, &t)
        }
        (DiagnosticLoss::PlugInPlm, other) => Err(Error::InvalidConfig(format!(
            "plug-in diagnostic is defined for PLM only, got {other}"
        ))),
    }
}

/// Gradient sensitivity of a loss to an `ε`-sized nuisance perturbation.
///
/// Fails with [`Error::RequiresTruth`] without a truth oracle.
pub fn orthogonality_diagnostic(
    kind: DiagnosticLoss,
    data: &TaskDataset,
    truth: Option<&dyn NuisanceOracle>,
    epsilon: f64,
    rows: RowSelection,
) -> Result<f64> {
    let truth = truth.ok_or(Error::RequiresTruth)?;
    if epsilon == 0.0 {
        return Ok(0.0);
    }
    let rows = data.rows(rows)?;
    let theta = truth.theta();
    let base = loss_at(kind, data, truth, &rows, 0.0)?;
    let shifted = loss_at(kind, data, truth, &rows, epsilon)?;
    let diff = sub(&shifted.gradient(&theta), &base.gradient(&theta));
    // Per-observation normalization; the DID loss is already mean-scale.
    let per_obs = base.n_eff() as f64 * base.obs_scale;
    Ok(norm2(&diff) / (epsilon.abs() * per_obs))
}
