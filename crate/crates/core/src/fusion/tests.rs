use proptest::prelude::*;

use super::*;
use crate::linalg::DenseMatrix;
use crate::weights::uniform_penalty;

fn scalar_losses(centers: &[f64]) -> Vec<QuadraticLoss> {
    centers.iter().map(|&c| QuadraticLoss::scalar(1.0, c, 10)).collect()
}

fn refs(losses: &[QuadraticLoss]) -> Vec<&dyn LossOracle> {
    losses.iter().map(|l| l as &dyn LossOracle).collect()
}

fn scalars(theta: &[ParamVector]) -> Vec<f64> {
    theta.iter().map(|t| t.0[0]).collect()
}

/// Exact minimizer of `Σ (θ_j − b_j)² + Σ_{j<k} λ_jk |θ_j − θ_k|` over scalars.
///
/// Enumerates every ordered set partition of the tasks. Within one ordering
/// the absolute values have fixed signs, so the objective is a smooth
/// quadratic in the block values with a closed-form stationary point; the
/// global minimum is the best feasible-or-not candidate evaluated under the
/// true objective (the optimum is always one of them).
fn enumerate_minimum(b: &[f64], lambda: &dyn Fn(usize, usize) -> f64) -> f64 {
    let m = b.len();
    let objective = |theta: &[f64]| {
        let mut f: f64 = theta.iter().zip(b).map(|(t, c)| (t - c).powi(2)).sum();
        for j in 0..m {
            for k in j + 1..m {
                f += lambda(j, k) * (theta[j] - theta[k]).abs();
            }
        }
        f
    };
    let mut best = f64::INFINITY;
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    fn recurse(
        next: usize,
        m: usize,
        blocks: &mut Vec<Vec<usize>>,
        visit: &mut dyn FnMut(&[Vec<usize>]),
    ) {
        if next == m {
            visit(blocks);
            return;
        }
        for i in 0..blocks.len() {
            blocks[i].push(next);
            recurse(next + 1, m, blocks, visit);
            blocks[i].pop();
        }
        for pos in 0..=blocks.len() {
            blocks.insert(pos, vec![next]);
            recurse(next + 1, m, blocks, visit);
            blocks.remove(pos);
        }
    }
    let mut visit = |ordered: &[Vec<usize>]| {
        // Block i sits below block i + 1. For task j in block i the
        // subgradient of the pairwise terms is +λ toward higher blocks and
        // −λ toward lower ones, so each block value is the member mean of
        // b minus half the net push, divided appropriately.
        let rank = |t: usize| ordered.iter().position(|blk| blk.contains(&t)).unwrap();
        let mut theta = vec![0.0; m];
        for blk in ordered {
            let mut total = 0.0;
            for &j in blk {
                let mut push = 0.0;
                for k in 0..m {
                    if rank(k) > rank(j) {
                        push -= lambda(j.min(k), j.max(k));
                    } else if rank(k) < rank(j) {
                        push += lambda(j.min(k), j.max(k));
                    }
                }
                total += b[j] - 0.5 * push;
            }
            let v = total / blk.len() as f64;
            for &j in blk {
                theta[j] = v;
            }
        }
        best = best.min(objective(&theta));
    };
    recurse(0, m, &mut blocks, &mut visit);
    best
}

#[test]
fn no_penalty_returns_task_minimizers() {
    let losses = scalar_losses(&[0.0, 1.0]);
    let sol = solve_fused(&refs(&losses), &uniform_penalty(2, 0.0).unwrap(), &SolverConfig::default()).unwrap();
    assert!(sol.converged);
    let t = scalars(&sol.theta_hat);
    assert!(t[0].abs() < 1e-6 && (t[1] - 1.0).abs() < 1e-6);
    assert_eq!(sol.n_clusters(), 2);
}

#[test]
fn large_penalty_fuses_everything() {
    let losses = scalar_losses(&[0.0, 1.0]);
    let sol = solve_fused(&refs(&losses), &uniform_penalty(2, 100.0).unwrap(), &SolverConfig::default()).unwrap();
    assert!(sol.converged);
    for t in scalars(&sol.theta_hat) {
        assert!((t - 0.5).abs() < 1e-6);
    }
    assert_eq!(sol.partition, Partition::single_cluster(2));
}

#[test]
fn moderate_penalty_shrinks_without_fusing() {
    let losses = scalar_losses(&[0.0, 1.0]);
    let sol = solve_fused(&refs(&losses), &uniform_penalty(2, 0.4).unwrap(), &SolverConfig::default()).unwrap();
    let t = scalars(&sol.theta_hat);
    assert!((t[0] - 0.2).abs() < 1e-6, "{t:?}");
    assert!((t[1] - 0.8).abs() < 1e-6, "{t:?}");
    assert_eq!(sol.n_clusters(), 2);
}

#[test]
fn close_pair_fuses_and_distant_task_stays_apart() {
    let b = [0.0, 0.01, 1.0];
    let losses = scalar_losses(&b);
    let pen = PenaltyMatrix::from_fn(3, |j, k| if (j, k) == (0, 1) { 10.0 } else { 1e-12 }).unwrap();
    let sol = solve_fused(&refs(&losses), &pen, &SolverConfig::default()).unwrap();
    assert!(sol.converged);
    assert_eq!(sol.partition, Partition::new(3, vec![vec![0, 1], vec![2]]).unwrap());
    let t = scalars(&sol.theta_hat);
    assert!((t[0] - 0.005).abs() < 1e-6 && (t[1] - 0.005).abs() < 1e-6);
    assert!((t[2] - 1.0).abs() < 1e-6);
}

#[test]
fn prox_examples() {
    assert_eq!(group_soft_threshold(&[3.0, 4.0], 10.0), vec![0.0, 0.0]);
    assert_eq!(group_soft_threshold(&[3.0, 4.0], 5.0), vec![0.0, 0.0]);
    let z = group_soft_threshold(&[3.0, 4.0], 2.5);
    assert!((z[0] - 1.5).abs() < 1e-15 && (z[1] - 2.0).abs() < 1e-15);
    assert_eq!(group_soft_threshold(&[0.0, 0.0], 0.0), vec![0.0, 0.0]);
}

#[test]
fn chain_penalty_recovers_partition_and_refit() {
    // Tasks 0 and 1 are tied strongly, task 2 only weakly to anything.
    let losses = scalar_losses(&[0.5, 1.0, 0.5]);
    let pen = PenaltyMatrix::from_fn(3, |j, k| if (j, k) == (0, 1) { 5.0 } else { 1e-12 }).unwrap();
    let sol = solve_fused(&refs(&losses), &pen, &SolverConfig::default()).unwrap();
    assert_eq!(sol.partition, Partition::new(3, vec![vec![0, 1], vec![2]]).unwrap());
    let refit = refit_clusters(&refs(&losses), &sol.partition).unwrap();
    assert!((refit[0].0[0] - 0.75).abs() < 1e-12);
    assert!((refit[1].0[0] - 0.5).abs() < 1e-12);
}

#[test]
fn matches_exact_enumeration_for_four_tasks() {
    let b = [0.0, 0.3, 0.35, 1.2];
    let lam = |j: usize, k: usize| [[0.0, 0.2, 0.05, 0.1], [0.0, 0.0, 0.3, 0.02], [0.0, 0.0, 0.0, 0.15], [0.0; 4]][j][k];
    let losses = scalar_losses(&b);
    let pen = PenaltyMatrix::from_fn(4, lam).unwrap();
    let sol = solve_fused(&refs(&losses), &pen, &SolverConfig::default()).unwrap();
    let exact = enumerate_minimum(&b, &lam);
    assert!(
        (sol.objective_value - exact).abs() <= 1e-6 * (1.0 + exact.abs()),
        "admm {} exact {}",
        sol.objective_value,
        exact
    );
}

#[test]
fn matches_grid_for_two_tasks() {
    let b = [0.1, 0.7];
    let lam = 0.25;
    let losses = scalar_losses(&b);
    let sol = solve_fused(&refs(&losses), &uniform_penalty(2, lam).unwrap(), &SolverConfig::default()).unwrap();
    let f = |x: f64, y: f64| (x - b[0]).powi(2) + (y - b[1]).powi(2) + lam * (x - y).abs();
    let mut best = f64::INFINITY;
    for i in 0..=1000 {
        for k in 0..=1000 {
            best = best.min(f(i as f64 * 1e-3, k as f64 * 1e-3));
        }
    }
    assert!(sol.objective_value <= best + 1e-9);
    assert!(best - sol.objective_value < 1e-5);
}

#[test]
fn vector_parameters_fuse_as_groups() {
    let a = DenseMatrix::identity(2);
    let losses = vec![
        QuadraticLoss::new(a.clone(), vec![1.0, 0.0], 1.0, 5).unwrap(),
        QuadraticLoss::new(a, vec![1.0, 0.2], 1.04, 5).unwrap(),
    ];
    let sol = solve_fused(&refs(&losses), &uniform_penalty(2, 1.0).unwrap(), &SolverConfig::default()).unwrap();
    assert_eq!(sol.n_clusters(), 1);
    assert!((sol.theta_hat[0].0[1] - 0.1).abs() < 1e-6);
}

/// `f(θ) = Σ_i log(1 + exp(θ − y_i)) + log(1 + exp(y_i − θ))`, smooth and
/// strictly convex with minimizer at the median-like center of `y`.
struct SoftAbs {
    y: Vec<f64>,
}

impl LossOracle for SoftAbs {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, t: &[f64]) -> f64 {
        self.y
            .iter()
            .map(|y| (1.0 + (t[0] - y).exp()).ln() + (1.0 + (y - t[0]).exp()).ln())
            .sum()
    }
    fn gradient(&self, t: &[f64]) -> Vec<f64> {
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        vec![self.y.iter().map(|y| s(t[0] - y) - s(y - t[0])).sum()]
    }
    fn hessian(&self, t: &[f64]) -> DenseMatrix {
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let h: f64 = self.y.iter().map(|y| 2.0 * s(t[0] - y) * (1.0 - s(t[0] - y))).sum();
        DenseMatrix::from_rows(&[vec![h]]).unwrap()
    }
    fn n_eff(&self) -> usize {
        self.y.len()
    }
}

#[test]
fn newton_path_handles_general_losses() {
    let losses = [SoftAbs { y: vec![0.0, 0.2] }, SoftAbs { y: vec![1.0, 1.4] }];
    let refs: Vec<&dyn LossOracle> = losses.iter().map(|l| l as &dyn LossOracle).collect();
    let free = solve_fused(&refs, &uniform_penalty(2, 0.0).unwrap(), &SolverConfig::default()).unwrap();
    assert!((free.theta_hat[0].0[0] - 0.1).abs() < 1e-6);
    assert!((free.theta_hat[1].0[0] - 1.2).abs() < 1e-6);
    let fused = solve_fused(&refs, &uniform_penalty(2, 50.0).unwrap(), &SolverConfig::default()).unwrap();
    assert_eq!(fused.n_clusters(), 1);
    let pooled = refit_clusters(&refs, &fused.partition).unwrap();
    let g = refs[0].gradient(pooled[0].as_slice())[0] + refs[1].gradient(pooled[0].as_slice())[0];
    assert!(g.abs() < 1e-8);
    assert!((fused.theta_hat[0].0[0] - pooled[0].0[0]).abs() < 1e-5);
}

#[test]
fn iteration_cap_returns_best_iterate() {
    let losses = scalar_losses(&[0.0, 0.3, 1.0, 2.0]);
    let cfg = SolverConfig {
        max_iter: 3,
        ..SolverConfig::default()
    };
    let sol = solve_fused(&refs(&losses), &uniform_penalty(4, 0.7).unwrap(), &cfg).unwrap();
    assert!(!sol.converged);
    assert_eq!(sol.iterations, 3);
    assert_eq!(sol.incumbent_trace.len(), 3);
}

#[test]
fn rejects_mismatched_inputs() {
    let losses = scalar_losses(&[0.0, 1.0]);
    assert!(matches!(
        solve_fused(&refs(&losses), &uniform_penalty(3, 1.0).unwrap(), &SolverConfig::default()),
        Err(Error::DimensionMismatch(_))
    ));
    let bad = SolverConfig {
        rho: 0.0,
        ..SolverConfig::default()
    };
    assert!(solve_fused(&refs(&losses), &uniform_penalty(2, 1.0).unwrap(), &bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prox_satisfies_subgradient_condition(
        v in proptest::collection::vec(-5.0f64..5.0, 1..5),
        kappa in 0.0f64..6.0,
    ) {
        let z = group_soft_threshold(&v, kappa);
        let nz = norm2(&z);
        let r: Vec<f64> = v.iter().zip(&z).map(|(a, b)| a - b).collect();
        if nz == 0.0 {
            prop_assert!(norm2(&v) <= kappa + 1e-12);
        } else {
            // v − z = κ z / ‖z‖
            for (ri, zi) in r.iter().zip(&z) {
                prop_assert!((ri - kappa * zi / nz).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn incumbent_trace_is_monotone(
        b in proptest::collection::vec(-2.0f64..2.0, 2..6),
        lam in 0.0f64..2.0,
    ) {
        let losses = scalar_losses(&b);
        let sol = solve_fused(&refs(&losses), &uniform_penalty(b.len(), lam).unwrap(), &SolverConfig::default()).unwrap();
        for w in sol.incumbent_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn permuting_tasks_permutes_the_solution(
        b in proptest::collection::vec(-2.0f64..2.0, 3..6),
        lam in 0.05f64..1.0,
        shift in 1usize..5,
    ) {
        let m = b.len();
        let perm: Vec<usize> = (0..m).map(|j| (j + shift) % m).collect();
        let pb: Vec<f64> = perm.iter().map(|&j| b[j]).collect();
        let cfg = SolverConfig::default();
        let s1 = solve_fused(&refs(&scalar_losses(&b)), &uniform_penalty(m, lam).unwrap(), &cfg).unwrap();
        let s2 = solve_fused(&refs(&scalar_losses(&pb)), &uniform_penalty(m, lam).unwrap(), &cfg).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            prop_assert!((s2.theta_hat[i].0[0] - s1.theta_hat[j].0[0]).abs() < 1e-5);
        }
        prop_assert!((s1.objective_value - s2.objective_value).abs() < 1e-8 * (1.0 + s1.objective_value.abs()));
    }

    #[test]
    fn admm_matches_enumeration_oracle(
        b in proptest::collection::vec(-1.0f64..1.0, 3..5),
        lams in proptest::collection::vec(0.0f64..0.6, 6),
    ) {
        let m = b.len();
        let lam = |j: usize, k: usize| lams[(j * 7 + k * 3) % 6];
        let pen = PenaltyMatrix::from_fn(m, lam).unwrap();
        let sol = solve_fused(&refs(&scalar_losses(&b)), &pen, &SolverConfig::default()).unwrap();
        let exact = enumerate_minimum(&b, &lam);
        prop_assert!(sol.objective_value - exact <= 1e-6 * (1.0 + exact.abs()),
            "admm {} exact {}", sol.objective_value, exact);
    }
}
