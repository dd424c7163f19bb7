use log::warn;

use super::{extract_partition, fused_objective, group_soft_threshold, EdgeVar, FusionSolution, SolverConfig};
use crate::data::ParamVector;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, solve_spd, Cholesky, DenseMatrix};
use crate::loss::{LossOracle, QuadraticLoss};
use crate::weights::PenaltyMatrix;

/// Edge list of the complete fusion graph.
struct Graph {
    m: usize,
    d: usize,
    pairs: Vec<(usize, usize)>,
    lambda: Vec<f64>,
}

impl Graph {
    fn edge_diff(&self, theta: &[f64], e: usize) -> Vec<f64> {
        let (j, k) = self.pairs[e];
        let d = self.d;
        (0..d).map(|r| theta[j * d + r] - theta[k * d + r]).collect()
    }

    /// `Dᵀw`: scatter per-edge vectors back onto their endpoints.
    fn scatter(&self, w: &[Vec<f64>]) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; self.m * d];
        for (e, &(j, k)) in self.pairs.iter().enumerate() {
            for r in 0..d {
                out[j * d + r] += w[e][r];
                out[k * d + r] -= w[e][r];
            }
        }
        out
    }
}

enum ThetaStep<'a> {
    /// Every loss is quadratic: one linear solve per iteration.
    Quadratic {
        quads: Vec<&'a QuadraticLoss>,
        factor: Cholesky,
    },
    /// General smooth losses: damped-Newton Gauss-Seidel sweeps.
    Newton,
}

fn system_matrix(quads: &[&QuadraticLoss], graph: &Graph, rho: f64) -> DenseMatrix {
    let (m, d) = (graph.m, graph.d);
    let mut sys = DenseMatrix::zeros(m * d, m * d);
    for (j, q) in quads.iter().enumerate() {
        for r in 0..d {
            for s in 0..d {
                sys[(j * d + r, j * d + s)] = 2.0 * q.a[(r, s)];
            }
        }
    }
    for &(j, k) in &graph.pairs {
        for r in 0..d {
            sys[(j * d + r, j * d + r)] += rho;
            sys[(k * d + r, k * d + r)] += rho;
            sys[(j * d + r, k * d + r)] -= rho;
            sys[(k * d + r, j * d + r)] -= rho;
        }
    }
    sys
}

fn factor_system(quads: &[&QuadraticLoss], graph: &Graph, rho: f64) -> Result<Cholesky> {
    Cholesky::factor(&system_matrix(quads, graph, rho)).map_err(|_| Error::SingularSystem)
}

struct Newton<'a> {
    losses: &'a [&'a dyn LossOracle],
    tol: f64,
}

impl Newton<'_> {
    /// Minimizes `f_j(θ_j) + (ρ/2) Σ_e ‖θ_j − target_e‖²` for each task in
    /// turn, repeating sweeps until no coordinate block moves more than `tol`.
    fn sweep(&self, theta: &mut [f64], graph: &Graph, z: &[Vec<f64>], u: &[Vec<f64>], rho: f64) -> Result<()> {
        let d = graph.d;
        let mut incident: Vec<Vec<(usize, bool)>> = vec![Vec::new(); graph.m];
        for (e, &(j, k)) in graph.pairs.iter().enumerate() {
            incident[j].push((e, true));
            incident[k].push((e, false));
        }
        for _sweep in 0..200 {
            let mut moved: f64 = 0.0;
            for j in 0..graph.m {
                let targets: Vec<Vec<f64>> = incident[j]
                    .iter()
                    .map(|&(e, first)| {
                        let (a, b) = graph.pairs[e];
                        let other = if first { b } else { a };
                        let sign = if first { 1.0 } else { -1.0 };
                        (0..d)
                            .map(|r| theta[other * d + r] + sign * (z[e][r] - u[e][r]))
                            .collect()
                    })
                    .collect();
                let loss = self.losses[j];
                let phi = |t: &[f64]| {
                    loss.value(t)
                        + 0.5 * rho
                            * targets
                                .iter()
                                .map(|c| t.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                                .sum::<f64>()
                };
                let mut t: Vec<f64> = theta[j * d..(j + 1) * d].to_vec();
                for _ in 0..100 {
                    let mut g = loss.gradient(&t);
                    for c in &targets {
                        for r in 0..d {
                            g[r] += rho * (t[r] - c[r]);
                        }
                    }
                    let mut h = loss.hessian(&t);
                    for r in 0..d {
                        h[(r, r)] += rho * targets.len() as f64;
                    }
                    let step = solve_spd(&h, &g).map_err(|_| Error::SingularSystem)?;
                    let f0 = phi(&t);
                    let mut scale = 1.0;
                    let mut next: Vec<f64> = t.iter().zip(&step).map(|(a, s)| a - s).collect();
                    while phi(&next) > f0 && scale > 1e-12 {
                        scale *= 0.5;
                        next = t.iter().zip(&step).map(|(a, s)| a - scale * s).collect();
                    }
                    let delta = t.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    t = next;
                    if delta <= self.tol * (1.0 + t.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                        break;
                    }
                }
                for r in 0..d {
                    moved = moved.max((theta[j * d + r] - t[r]).abs());
                    theta[j * d + r] = t[r];
                }
            }
            if moved <= self.tol {
                break;
            }
        }
        Ok(())
    }
}

/// Minimizes the fused objective over all tasks.
///
/// On hitting `max_iter` the best iterate seen is returned with
/// `converged = false` and a warning is logged.
pub fn solve_fused(
    losses: &[&dyn LossOracle],
    penalties: &PenaltyMatrix,
    cfg: &SolverConfig,
) -> Result<FusionSolution> {
    cfg.validate()?;
    let m = losses.len();
    if m == 0 {
        return Err(Error::InvalidConfig("no tasks to fuse".into()));
    }
    if penalties.n_tasks() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} losses but a {}-task penalty matrix",
            m,
            penalties.n_tasks()
        )));
    }
    let d = losses[0].dim();
    if losses.iter().any(|l| l.dim() != d) {
        return Err(Error::DimensionMismatch("task losses differ in dimension".into()));
    }
    let (pairs, lambda): (Vec<_>, Vec<_>) = penalties.edges().map(|(j, k, l)| ((j, k), l)).unzip();
    let graph = Graph { m, d, pairs, lambda };
    let n_edges = graph.pairs.len();

    let mut rho = cfg.rho;
    let quads: Option<Vec<&QuadraticLoss>> = losses.iter().map(|l| l.as_quadratic()).collect();
    let mut step = match quads {
        Some(quads) => {
            let factor = factor_system(&quads, &graph, rho)?;
            ThetaStep::Quadratic { quads, factor }
        }
        None => ThetaStep::Newton,
    };
    let newton = Newton {
        losses,
        tol: cfg.inner_newton_tol,
    };

    // Warm start at the decoupled minimizers when they exist.
    let mut theta = vec![0.0; m * d];
    for (j, l) in losses.iter().enumerate() {
        if let Some(q) = l.as_quadratic() {
            if let Ok(t) = q.minimizer() {
                theta[j * d..(j + 1) * d].copy_from_slice(&t);
            }
        }
    }
    let mut z: Vec<Vec<f64>> = (0..n_edges).map(|e| graph.edge_diff(&theta, e)).collect();
    let mut u: Vec<Vec<f64>> = vec![vec![0.0; d]; n_edges];

    let as_params = |t: &[f64]| -> Vec<ParamVector> { t.chunks(d).map(|c| ParamVector(c.to_vec())).collect() };
    let mut best_theta = theta.clone();
    let mut best_obj = f64::INFINITY;
    let mut trace = Vec::new();
    let mut balance_steps = 0;
    let mut converged = false;
    let mut iterations = 0;
    let sqrt_ed = ((n_edges * d).max(1) as f64).sqrt();

    for it in 1..=cfg.max_iter {
        iterations = it;
        match &step {
            ThetaStep::Quadratic { quads, factor } => {
                let mut rhs = vec![0.0; m * d];
                for (j, q) in quads.iter().enumerate() {
                    for r in 0..d {
                        rhs[j * d + r] = 2.0 * q.b[r];
                    }
                }
                let zu: Vec<Vec<f64>> = z
                    .iter()
                    .zip(&u)
                    .map(|(ze, ue)| ze.iter().zip(ue).map(|(a, b)| rho * (a - b)).collect())
                    .collect();
                for (a, b) in rhs.iter_mut().zip(graph.scatter(&zu)) {
                    *a += b;
                }
                theta = factor.solve(&rhs);
            }
            ThetaStep::Newton => newton.sweep(&mut theta, &graph, &z, &u, rho)?,
        }

        let z_old = std::mem::take(&mut z);
        let mut primal_sq = 0.0;
        let mut dtheta_sq = 0.0;
        let mut z_sq = 0.0;
        for e in 0..n_edges {
            let diff = graph.edge_diff(&theta, e);
            let v: Vec<f64> = diff.iter().zip(&u[e]).map(|(a, b)| a + b).collect();
            let ze = group_soft_threshold(&v, graph.lambda[e] / rho);
            for r in 0..d {
                let res = diff[r] - ze[r];
                u[e][r] += res;
                primal_sq += res * res;
            }
            dtheta_sq += dot(&diff, &diff);
            z_sq += dot(&ze, &ze);
            z.push(ze);
        }
        let dz: Vec<Vec<f64>> = z
            .iter()
            .zip(&z_old)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let primal = primal_sq.sqrt();
        let dual = rho * norm2(&graph.scatter(&dz));

        let params = as_params(&theta);
        let obj = fused_objective(losses, penalties, &params);
        if obj < best_obj {
            best_obj = obj;
            best_theta.clone_from(&theta);
        }
        trace.push(best_obj);

        let eps_pri = cfg.tol_abs * sqrt_ed + cfg.tol_rel * dtheta_sq.sqrt().max(z_sq.sqrt());
        let eps_dual = cfg.tol_abs * sqrt_ed + cfg.tol_rel * rho * norm2(&graph.scatter(&u));
        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }

        if cfg.residual_balance && balance_steps < cfg.max_balance_steps && it % 10 == 0 {
            let new_rho = if primal > cfg.balance_trigger * dual {
                Some(rho * cfg.balance_factor)
            } else if dual > cfg.balance_trigger * primal {
                Some(rho / cfg.balance_factor)
            } else {
                None
            };
            if let Some(new_rho) = new_rho {
                let ratio = rho / new_rho;
                for ue in &mut u {
                    ue.iter_mut().for_each(|v| *v *= ratio);
                }
                rho = new_rho;
                balance_steps += 1;
                if let ThetaStep::Quadratic { quads, factor } = &mut step {
                    *factor = factor_system(quads, &graph, rho)?;
                }
            }
        }
    }

    if !converged {
        warn!("fusion ADMM stopped after {iterations} iterations without converging");
        theta = best_theta;
    }

    let edges: Vec<EdgeVar> = graph
        .pairs
        .iter()
        .zip(z.into_iter().zip(u))
        .zip(&graph.lambda)
        .map(|((&(j, k), (z, u)), &lambda)| EdgeVar { j, k, z, u, lambda })
        .collect();
    let (partition, theta_hat) = extract_partition(&as_params(&theta), &edges, cfg);
    let objective_value = fused_objective(losses, penalties, &theta_hat);
    Ok(FusionSolution {
        theta_hat,
        edges,
        partition,
        iterations,
        converged,
        objective_value,
        incumbent_trace: trace,
        rho_final: rho,
    })
}
