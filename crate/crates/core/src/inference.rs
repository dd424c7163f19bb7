//! Cluster-pooled sandwich variances and Wald intervals.
//!
//! For a recovered cluster `S` with pooled size `N = Σ_{j∈S} n_j`,
//!
//! ```text
//! Ψ = N⁻¹ Σ_j Σ_i ∇²ℓ_ji(θ̂_j)      Ω = N⁻¹ Σ_j Σ_i ∇ℓ_ji(θ̂_j) ∇ℓ_ji(θ̂_j)ᵀ
//! Var(θ̂) = Ψ⁻¹ Ω Ψ⁻¹ / N
//! ```
//!
//! Scores are not re-centered before the outer product.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{ParamVector, Partition};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::loss::TaskLoss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterInference {
    pub cluster_id: usize,
    pub members: Vec<usize>,
    /// Pooled effective sample size.
    pub n_k: usize,
    pub estimate: ParamVector,
    pub psi_hat: DenseMatrix,
    pub omega_hat: DenseMatrix,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub level: f64,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation (relative error about 1e-9) followed by
/// one Halley step against the exact CDF.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Two-sided critical value `z_{1 − (1 − level)/2}`.
pub fn critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level must lie in (0, 1), got {level}")));
    }
    Ok(normal_quantile(1.0 - (1.0 - level) / 2.0))
}

/// Sandwich inference for every cluster of `partition`.
///
/// `losses[j]` supplies task `j`'s observation-level scores and Hessians;
/// each is evaluated at `theta_hat[j]`. The reported estimate is the mean of
/// the members' `θ̂_j`, which after the consensus snap is their common value.
pub fn sandwich_inference(
    partition: &Partition,
    losses: &[TaskLoss],
    theta_hat: &[ParamVector],
    level: f64,
) -> Result<Vec<ClusterInference>> {
    let z = critical_value(level)?;
    if losses.len() != partition.n_tasks() || theta_hat.len() != partition.n_tasks() {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} tasks, got {} losses and {} estimates",
            partition.n_tasks(),
            losses.len(),
            theta_hat.len()
        )));
    }
    partition
        .clusters()
        .iter()
        .enumerate()
        .map(|(k, members)| {
            if members.is_empty() {
                return Err(Error::EmptyCluster(k));
            }
            let d = theta_hat[members[0]].dim();
            let mut psi = DenseMatrix::zeros(d, d);
            let mut omega = DenseMatrix::zeros(d, d);
            let mut estimate = vec![0.0; d];
            let mut n_k = 0;
            let mut n_obs = 0;
            for &j in members {
                let loss = &losses[j];
                let theta = theta_hat[j].as_slice();
                if loss.observations.dim() != d || theta.len() != d {
                    return Err(Error::DimensionMismatch(format!("task {j} has the wrong dimension")));
                }
                for (acc, v) in estimate.iter_mut().zip(theta) {
                    *acc += v / members.len() as f64;
                }
                let obs = &loss.observations;
                for i in 0..obs.len() {
                    psi.add_scaled(&obs.hessian(i), 1.0);
                    let s = obs.score(i, theta);
                    omega.add_scaled(&DenseMatrix::outer(&s, &s), 1.0);
                }
                n_k += loss.quadratic.n_eff;
                n_obs += obs.len();
            }
            if n_obs == 0 {
                return Err(Error::EmptyCluster(k));
            }
            let psi = psi.scaled(1.0 / n_obs as f64);
            let omega = omega.scaled(1.0 / n_obs as f64);
            let psi_inv = Cholesky::factor(&psi)
                .map_err(|_| Error::SingularHessian(k))?
                .inverse();
            let var = psi_inv.matmul(&omega).matmul(&psi_inv).scaled(1.0 / n_k as f64);
            let se: Vec<f64> = (0..d).map(|r| var[(r, r)].max(0.0).sqrt()).collect();
            let ci_lo = estimate.iter().zip(&se).map(|(e, s)| e - z * s).collect();
            let ci_hi = estimate.iter().zip(&se).map(|(e, s)| e + z * s).collect();
            Ok(ClusterInference {
                cluster_id: k,
                members: members.clone(),
                n_k,
                estimate: ParamVector(estimate),
                psi_hat: psi,
                omega_hat: omega,
                se,
                ci_lo,
                ci_hi,
                level,
            })
        })
        .collect()
}

/// Per-task standard errors read off cluster inference (first coordinate).
pub fn task_standard_errors(inference: &[ClusterInference], m: usize) -> Vec<f64> {
    let mut se = vec![f64::NAN; m];
    for c in inference {
        for &j in &c.members {
            se[j] = c.se[0];
        }
    }
    se
}

/// `Z_j = (θ̂_j − θ*_j) / se_j` on the first coordinate.
pub fn standardize_estimates(
    theta_hat: &[ParamVector],
    theta_true: &[ParamVector],
    se: &[f64],
) -> Result<Vec<f64>> {
    if theta_hat.len() != theta_true.len() || theta_hat.len() != se.len() {
        return Err(Error::DimensionMismatch("estimates, truths and standard errors differ in length".into()));
    }
    theta_hat
        .iter()
        .zip(theta_true)
        .zip(se)
        .enumerate()
        .map(|(j, ((h, t), &s))| {
            if !(s > 0.0) {
                return Err(Error::ZeroSe(j));
            }
            Ok((h.0[0] - t.0[0]) / s)
        })
        .collect()
}
