//! Pilot estimates and the adaptive pairwise penalty matrix.
//!
//! Penalties follow
//!
//! ```text
//! w_jk = min(c_w · ‖θ̂_j − θ̂_k‖^(−γ), w_cap)
//! λ_jk = ε_n   if w_jk ≤ τ
//!        w_jk  otherwise
//! ```
//!
//! so tasks with nearly identical pilots are fused hard while distant pairs
//! receive a negligible floor penalty.

use serde::{Deserialize, Serialize};

use crate::data::{ModelKind, ParamVector, RowSelection, TaskDataset};
use crate::error::{Error, Result};
use crate::linalg::{norm2, sub};
use crate::loss::build_task_loss;
use crate::nuisance::{fit_task_nuisances, NuisanceLearnerSpec};
use crate::rng::RngHandle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionHyperparams {
    pub c_w: f64,
    pub gamma: f64,
    pub tau: f64,
    pub eps_n: f64,
    /// Weight assigned to pairs with coincident pilots (and the upper cap of
    /// every adaptive weight).
    pub w_cap: f64,
}

impl Default for FusionHyperparams {
    fn default() -> Self {
        Self {
            c_w: 0.1,
            gamma: 2.0,
            tau: 10.0,
            eps_n: 1e-12,
            w_cap: 1e12,
        }
    }
}

impl FusionHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.c_w > 0.0) {
            return bad("c_w must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(self.tau >= 0.0) || !(self.eps_n >= 0.0) {
            return bad("tau and eps_n must be nonnegative");
        }
        if !(self.w_cap >= self.tau) {
            return bad("w_cap must be at least tau");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Adaptive weight above the threshold.
    Adaptive,
    /// Replaced by the floor `ε_n`.
    Floor,
    /// Constant user-supplied penalty.
    Uniform,
}

/// Symmetric pairwise penalties with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyMatrix {
    m: usize,
    values: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl PenaltyMatrix {
    fn filled(m: usize, value: f64, provenance: Provenance) -> Self {
        let mut values = vec![value; m * m];
        for j in 0..m {
            values[j * m + j] = 0.0;
        }
        Self {
            m,
            values,
            provenance: vec![provenance; m * m],
        }
    }

    fn set(&mut self, j: usize, k: usize, value: f64, provenance: Provenance) {
        self.values[j * self.m + k] = value;
        self.values[k * self.m + j] = value;
        self.provenance[j * self.m + k] = provenance;
        self.provenance[k * self.m + j] = provenance;
    }

    pub fn n_tasks(&self) -> usize {
        self.m
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.m + k]
    }

    pub fn provenance(&self, j: usize, k: usize) -> Provenance {
        self.provenance[j * self.m + k]
    }

    /// Unordered pairs `(j, k, λ_jk)` with `j < k`, row-major.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.m).flat_map(move |j| ((j + 1)..self.m).map(move |k| (j, k, self.get(j, k))))
    }

    /// Builds a penalty matrix from explicit entries (all marked uniform).
    pub fn from_fn(m: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut p = Self::filled(m, 0.0, Provenance::Uniform);
        for j in 0..m {
            for k in (j + 1)..m {
                let v = f(j, k);
                if !(v >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "penalty ({j}, {k}) = {v} is not a nonnegative number"
                    )));
                }
                p.set(j, k, v, Provenance::Uniform);
            }
        }
        Ok(p)
    }
}

/// The same penalty `lambda` on every pair; `lambda = 0` decouples the tasks.
pub fn uniform_penalty(m: usize, lambda: f64) -> Result<PenaltyMatrix> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "uniform penalty must be nonnegative, got {lambda}"
        )));
    }
    Ok(PenaltyMatrix::filled(m, lambda, Provenance::Uniform))
}

/// Raw adaptive weight for a pilot distance, before thresholding.
pub fn adaptive_weight(distance: f64, hp: &FusionHyperparams) -> f64 {
    if distance == 0.0 {
        hp.w_cap
    } else {
        (hp.c_w * distance.powf(-hp.gamma)).min(hp.w_cap)
    }
}

/// Adaptive penalties from pilot estimates.
pub fn compute_weights(pilots: &[ParamVector], hp: &FusionHyperparams) -> Result<PenaltyMatrix> {
    let m = pilots.len();
    if m < 2 {
        return Err(Error::InvalidConfig(format!(
            "adaptive weights need at least 2 tasks, got {m}"
        )));
    }
    if pilots.iter().any(|p| p.dim() != pilots[0].dim()) {
        return Err(Error::DimensionMismatch("pilot estimates differ in dimension".into()));
    }
    let mut out = PenaltyMatrix::filled(m, hp.eps_n, Provenance::Floor);
    for j in 0..m {
        for k in (j + 1)..m {
            let dist = norm2(&sub(pilots[j].as_slice(), pilots[k].as_slice()));
            let w = adaptive_weight(dist, hp);
            if w <= hp.tau {
                out.set(j, k, hp.eps_n, Provenance::Floor);
            } else {
                out.set(j, k, w, Provenance::Adaptive);
            }
        }
    }
    Ok(out)
}

/// Stage-one pilot: nuisances and the model's loss both on all rows, then
/// the unpenalized minimizer.
pub fn fit_pilot(
    data: &TaskDataset,
    model: ModelKind,
    learner: &NuisanceLearnerSpec,
    clip: (f64, f64),
    rng: &RngHandle,
) -> Result<ParamVector> {
    if data.n() < 4 {
        return Err(Error::TooFewObservations {
            n: data.n(),
            required: 4,
        });
    }
    let fits = fit_task_nuisances(data, model, learner, RowSelection::All, clip, rng)?;
    let loss = build_task_loss(data, &fits, RowSelection::All, RowSelection::All)?;
    Ok(ParamVector(loss.quadratic.minimizer()?))
}
