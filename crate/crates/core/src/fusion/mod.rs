//! Fused multitask objective
//!
//! ```text
//! minimize  Σ_j f_j(θ_j) + Σ_{j<k} λ_jk ‖θ_j − θ_k‖₂
//! ```
//!
//! solved by ADMM over per-edge difference variables `z_jk = θ_j − θ_k`.
//! The group soft-threshold update sets `z_jk` exactly to zero when the pair
//! is fused, which gives a clean signal for reading off the task clusters.

mod admm;

use serde::{Deserialize, Serialize};

use crate::data::{ParamVector, Partition};
use crate::error::{Error, Result};
use crate::linalg::{norm2, norm_inf, solve_spd, sub, DenseMatrix};
use crate::loss::{LossOracle, QuadraticLoss};
use crate::weights::PenaltyMatrix;

pub use admm::solve_fused;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Initial ADMM penalty parameter.
    pub rho: f64,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    pub residual_balance: bool,
    /// Multiplier applied to ρ when rebalancing.
    pub balance_factor: f64,
    /// Primal/dual residual ratio that triggers rebalancing.
    pub balance_trigger: f64,
    pub max_balance_steps: usize,
    /// Stopping tolerance of the inner Newton sweeps for non-quadratic losses.
    pub inner_newton_tol: f64,
    /// Relative distance below which fused pairs are treated as equal.
    pub fuse_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            tol_abs: 1e-8,
            tol_rel: 1e-6,
            max_iter: 10_000,
            residual_balance: true,
            balance_factor: 2.0,
            balance_trigger: 10.0,
            max_balance_steps: 30,
            inner_newton_tol: 1e-10,
            fuse_tol: 1e-5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("tol_abs", self.tol_abs),
            ("tol_rel", self.tol_rel),
            ("inner_newton_tol", self.inner_newton_tol),
            ("fuse_tol", self.fuse_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        if !(self.balance_factor > 1.0) || !(self.balance_trigger > 1.0) {
            return Err(Error::InvalidConfig(
                "balance_factor and balance_trigger must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

/// Edge `(j, k)` of the fusion graph with its split variable and scaled dual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeVar {
    pub j: usize,
    pub k: usize,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: f64,
}

impl EdgeVar {
    /// The soft threshold put the difference exactly at zero.
    pub fn is_zero(&self) -> bool {
        self.z.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSolution {
    /// Per-task estimates after the consensus snap.
    pub theta_hat: Vec<ParamVector>,
    pub edges: Vec<EdgeVar>,
    pub partition: Partition,
    pub iterations: usize,
    pub converged: bool,
    /// Fused objective at `theta_hat`.
    pub objective_value: f64,
    /// Best objective seen up to each iteration (non-increasing).
    pub incumbent_trace: Vec<f64>,
    pub rho_final: f64,
}

impl FusionSolution {
    pub fn n_clusters(&self) -> usize {
        self.partition.len()
    }
}

/// Proximal operator of `κ‖·‖₂`: zero inside the ball, radial shrink outside.
pub fn group_soft_threshold(v: &[f64], kappa: f64) -> Vec<f64> {
    let norm = norm2(v);
    if norm <= kappa {
        vec![0.0; v.len()]
    } else {
        let s = 1.0 - kappa / norm;
        v.iter().map(|x| s * x).collect()
    }
}

/// `Σ_j f_j(θ_j) + Σ_{j<k} λ_jk ‖θ_j − θ_k‖₂`.
pub fn fused_objective(
    losses: &[&dyn LossOracle],
    penalties: &PenaltyMatrix,
    theta: &[ParamVector],
) -> f64 {
    let fit: f64 = losses
        .iter()
        .zip(theta)
        .map(|(f, t)| f.value(t.as_slice()))
        .sum();
    let pen: f64 = penalties
        .edges()
        .map(|(j, k, l)| {
            if l == 0.0 {
                0.0
            } else {
                l * norm2(&sub(theta[j].as_slice(), theta[k].as_slice()))
            }
        })
        .sum();
    fit + pen
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of the exactly-fused edges whose endpoints also
/// agree within `fuse_tol · (1 + max‖θ‖∞)`. Each component's estimates are
/// replaced by their mean.
pub fn extract_partition(
    theta: &[ParamVector],
    edges: &[EdgeVar],
    cfg: &SolverConfig,
) -> (Partition, Vec<ParamVector>) {
    let m = theta.len();
    let scale = 1.0 + theta.iter().map(|t| norm_inf(t.as_slice())).fold(0.0, f64::max);
    let tol = cfg.fuse_tol * scale;
    let mut uf = UnionFind::new(m);
    for e in edges {
        if e.is_zero() && norm2(&sub(theta[e.j].as_slice(), theta[e.k].as_slice())) <= tol {
            uf.union(e.j, e.k);
        }
    }
    let labels: Vec<usize> = (0..m).map(|j| uf.find(j)).collect();
    let partition = Partition::from_labels(&labels);
    let mut snapped = theta.to_vec();
    for cluster in partition.clusters() {
        if cluster.len() < 2 {
            continue;
        }
        let d = theta[cluster[0]].dim();
        let mut mean = vec![0.0; d];
        for &j in cluster {
            for (acc, v) in mean.iter_mut().zip(theta[j].as_slice()) {
                *acc += v / cluster.len() as f64;
            }
        }
        for &j in cluster {
            snapped[j] = ParamVector(mean.clone());
        }
    }
    (partition, snapped)
}

/// Unpenalized pooled minimizer of `Σ_{j∈S_k} f_j` for every cluster.
pub fn refit_clusters(losses: &[&dyn LossOracle], partition: &Partition) -> Result<Vec<ParamVector>> {
    partition
        .clusters()
        .iter()
        .map(|cluster| {
            let members: Vec<&dyn LossOracle> = cluster.iter().map(|&j| losses[j]).collect();
            let quads: Option<Vec<&QuadraticLoss>> = members.iter().map(|l| l.as_quadratic()).collect();
            match quads {
                Some(qs) => {
                    let pooled = QuadraticLoss::sum(qs).ok_or(Error::SingularSystem)?;
                    pooled
                        .minimizer()
                        .map(ParamVector)
                        .map_err(|_| Error::SingularSystem)
                }
                None => newton_minimize(&members, 1e-12, 200).map(ParamVector),
            }
        })
        .collect()
}

/// Damped Newton on a sum of smooth convex losses, started at zero.
fn newton_minimize(losses: &[&dyn LossOracle], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let d = losses[0].dim();
    let total = |t: &[f64]| losses.iter().map(|l| l.value(t)).sum::<f64>();
    let mut theta = vec![0.0; d];
    for _ in 0..max_iter {
        let mut g = vec![0.0; d];
        let mut h = DenseMatrix::zeros(d, d);
        for l in losses {
            for (a, b) in g.iter_mut().zip(l.gradient(&theta)) {
                *a += b;
            }
            h.add_scaled(&l.hessian(&theta), 1.0);
        }
        let step = solve_spd(&h, &g).map_err(|_| Error::SingularSystem)?;
        let f0 = total(&theta);
        let mut t = 1.0;
        let mut next: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - s).collect();
        while total(&next) > f0 && t > 1e-10 {
            t *= 0.5;
            next = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
        }
        let moved = norm_inf(&sub(&next, &theta));
        theta = next;
        if moved <= tol * (1.0 + norm_inf(&theta)) {
            break;
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests;
