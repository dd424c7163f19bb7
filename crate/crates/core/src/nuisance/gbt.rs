//! Gradient-boosted regression trees.
//!
//! Trees are grown level by level with exact greedy splits: every feature is
//! sorted once per fit, and each level is a single pass over the presorted
//! columns that scores all candidate thresholds of all open nodes at once.
//! Splits maximize the reduction in squared error of the current
//! pseudo-residuals.

use serde::{Deserialize, Serialize};

use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    #[cfg(test)]
    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

/// Row order of every feature column, computed once per fit.
pub(crate) struct SortedColumns {
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(x: &DenseMatrix) -> Self {
        let order = (0..x.cols())
            .map(|f| {
                let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
                idx.sort_by(|&a, &b| x[(a as usize, f)].total_cmp(&x[(b as usize, f)]));
                idx
            })
            .collect();
        Self { order }
    }
}

const UNASSIGNED: u32 = u32::MAX;

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree on `target`. `leaf_value(sum_target, sum_weight, count)`
/// turns node statistics into the leaf output; `weight` is the per-row
/// second-order weight (all ones for squared error).
///
/// Returns the tree and the leaf value each training row lands in.
pub(crate) fn grow_tree(
    x: &DenseMatrix,
    sorted: &SortedColumns,
    target: &[f64],
    weight: &[f64],
    params: TreeParams,
    leaf_value: impl Fn(f64, f64, usize) -> f64,
) -> (Tree, Vec<f64>) {
    let n = x.rows();
    let mut node_of = vec![0u32; n];
    let mut sum = vec![target.iter().sum::<f64>()];
    let mut sum_w = vec![weight.iter().sum::<f64>()];
    let mut count = vec![n];
    let mut nodes: Vec<Option<Node>> = vec![None];
    let mut open: Vec<usize> = vec![0];

    for _depth in 0..params.max_depth {
        let splittable: Vec<usize> = open
            .iter()
            .copied()
            .filter(|&k| count[k] >= 2 * params.min_leaf)
            .collect();
        if splittable.is_empty() {
            break;
        }
        let width = nodes.len();
        let mut active = vec![false; width];
        for &k in &splittable {
            active[k] = true;
        }
        let mut best: Vec<Option<Candidate>> = (0..width).map(|_| None).collect();
        let mut left_sum = vec![0.0; width];
        let mut left_cnt = vec![0usize; width];
        let mut last = vec![f64::NEG_INFINITY; width];

        for (f, order) in sorted.order.iter().enumerate() {
            for &k in &splittable {
                left_sum[k] = 0.0;
                left_cnt[k] = 0;
                last[k] = f64::NEG_INFINITY;
            }
            for &row in order {
                let i = row as usize;
                let k = node_of[i] as usize;
                if node_of[i] == UNASSIGNED || !active[k] {
                    continue;
                }
                let v = x[(i, f)];
                let nl = left_cnt[k];
                let nr = count[k] - nl;
                if nl >= params.min_leaf && nr >= params.min_leaf && v > last[k] {
                    let sl = left_sum[k];
                    let sr = sum[k] - sl;
                    let gain = sl * sl / nl as f64 + sr * sr / nr as f64
                        - sum[k] * sum[k] / count[k] as f64;
                    if best[k].as_ref().map_or(true, |b| gain > b.gain) {
                        let a = last[k];
                        let mut threshold = a + 0.5 * (v - a);
                        if threshold >= v {
                            threshold = a;
                        }
                        best[k] = Some(Candidate {
                            gain,
                            feature: f,
                            threshold,
                        });
                    }
                }
                left_sum[k] += target[i];
                left_cnt[k] += 1;
                last[k] = v;
            }
        }

        let mut next_open = Vec::new();
        let mut children: Vec<Option<(usize, usize, usize, f64)>> = vec![None; width];
        for &k in &splittable {
            if let Some(c) = best[k].take() {
                let scale = sum[k].abs().max(1.0);
                if c.gain <= 1e-14 * scale * scale {
                    continue;
                }
                let left = nodes.len();
                let right = left + 1;
                nodes.push(None);
                nodes.push(None);
                sum.extend([0.0, 0.0]);
                sum_w.extend([0.0, 0.0]);
                count.extend([0, 0]);
                nodes[k] = Some(Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                });
                children[k] = Some((left, right, c.feature, c.threshold));
                next_open.extend([left, right]);
            }
        }
        if next_open.is_empty() {
            break;
        }
        for i in 0..n {
            if node_of[i] == UNASSIGNED {
                continue;
            }
            let k = node_of[i] as usize;
            if k < width {
                if let Some((left, right, f, t)) = children[k] {
                    let child = if x[(i, f)] <= t { left } else { right };
                    node_of[i] = child as u32;
                    sum[child] += target[i];
                    sum_w[child] += weight[i];
                    count[child] += 1;
                }
            }
        }
        open = next_open;
    }

    let values: Vec<f64> = (0..nodes.len())
        .map(|k| leaf_value(sum[k], sum_w[k], count[k]))
        .collect();
    let nodes: Vec<Node> = nodes
        .into_iter()
        .enumerate()
        .map(|(k, node)| node.unwrap_or(Node::Leaf(values[k])))
        .collect();
    let row_values = node_of
        .iter()
        .map(|&k| match nodes[k as usize] {
            Node::Leaf(v) => v,
            Node::Split { .. } => unreachable!("rows always end in a leaf"),
        })
        .collect();
    (Tree { nodes }, row_values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) enum Link {
    Identity,
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct GbtModel {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    link: Link,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoostParams {
    pub trees: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
}

/// Logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl GbtModel {
    /// Raw additive score (log-odds for the logistic link).
    pub fn raw(&self, x: &[f64]) -> f64 {
        self.base
            + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.link {
            Link::Identity => self.raw(x),
            Link::Logit => sigmoid(self.raw(x)),
        }
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Least-squares boosting. Also returns the training MSE after each stage,
/// starting with the constant fit.
pub(crate) fn fit_least_squares(
    x: &DenseMatrix,
    y: &[f64],
    params: BoostParams,
) -> (GbtModel, Vec<f64>) {
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![base; n];
    let sorted = SortedColumns::new(x);
    let ones = vec![1.0; n];
    let mse = |f: &[f64]| y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let mut history = vec![mse(&fitted)];
    let mut trees = Vec::with_capacity(params.trees);
    let mut residual = vec![0.0; n];
    for _ in 0..params.trees {
        for i in 0..n {
            residual[i] = y[i] - fitted[i];
        }
        let (tree, step) = grow_tree(x, &sorted, &residual, &ones, params.tree, |s, _, c| {
            if c == 0 {
                0.0
            } else {
                s / c as f64
            }
        });
        for i in 0..n {
            fitted[i] += params.learning_rate * step[i];
        }
        trees.push(tree);
        history.push(mse(&fitted));
    }
    let model = GbtModel {
        base,
        learning_rate: params.learning_rate,
        trees,
        link: Link::Identity,
    };
    (model, history)
}

/// Binomial-deviance boosting with one Newton step per leaf.
pub(crate) fn fit_logistic(x: &DenseMatrix, d: &[f64], params: BoostParams) -> GbtModel {
    let n = d.len();
    let freq = (d.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base = (freq / (1.0 - freq)).ln();
    let mut raw = vec![base; n];
    let sorted = SortedColumns::new(x);
    let mut residual = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.trees);
    for _ in 0..params.trees {
        for i in 0..n {
            let p = sigmoid(raw[i]);
            residual[i] = d[i] - p;
            hess[i] = p * (1.0 - p);
        }
        let (tree, step) = grow_tree(x, &sorted, &residual, &hess, params.tree, |s, h, _| {
            (s / (h + 1e-9)).clamp(-8.0, 8.0)
        });
        for i in 0..n {
            raw[i] += params.learning_rate * step[i];
        }
        trees.push(tree);
    }
    GbtModel {
        base,
        learning_rate: params.learning_rate,
        trees,
        link: Link::Logit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(trees: usize, depth: usize, lr: f64, min_leaf: usize) -> BoostParams {
        BoostParams {
            trees,
            learning_rate: lr,
            tree: TreeParams {
                max_depth: depth,
                min_leaf,
            },
        }
    }

    #[test]
    fn stump_finds_the_threshold() {
        let x = DenseMatrix::from_vec(6, 1, vec![1.0, 2.0, 3.0, 10.0, 11.0, 12.0]).unwrap();
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let (model, _) = fit_least_squares(&x, &y, params(1, 1, 1.0, 1));
        assert_eq!(model.trees[0].leaves(), 2);
        assert!((model.predict(&[2.5]) - 0.0).abs() < 1e-12);
        assert!((model.predict(&[10.5]) - 1.0).abs() < 1e-12);
        // Threshold sits between 3 and 10.
        assert!((model.predict(&[6.5]) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn ties_stay_together() {
        let x = DenseMatrix::from_vec(6, 1, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0]).unwrap();
        let y = [0.0, 1.0, 0.0, 1.0, 5.0, 5.0];
        let (model, _) = fit_least_squares(&x, &y, params(1, 1, 1.0, 1));
        assert!((model.predict(&[1.0]) - 0.5).abs() < 1e-12);
        assert!((model.predict(&[2.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn min_leaf_blocks_small_children() {
        let x = DenseMatrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = [0.0, 0.0, 0.0, 10.0];
        let (model, _) = fit_least_squares(&x, &y, params(1, 3, 1.0, 2));
        assert_eq!(model.trees[0].leaves(), 2);
        assert!((model.predict(&[4.0]) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn depth_limits_leaves() {
        let x = DenseMatrix::from_vec(16, 1, (0..16).map(f64::from).collect()).unwrap();
        let y: Vec<f64> = (0..16).map(|i| f64::from(i * i)).collect();
        let (model, _) = fit_least_squares(&x, &y, params(1, 2, 1.0, 1));
        assert_eq!(model.trees[0].leaves(), 4);
    }

    #[test]
    fn training_loss_is_monotone() {
        let n = 200;
        let x = DenseMatrix::from_vec(
            n,
            2,
            (0..2 * n).map(|i| ((i * 7919) % 211) as f64 / 211.0).collect(),
        )
        .unwrap();
        let y: Vec<f64> = (0..n)
            .map(|i| (x[(i, 0)] * 6.0).sin() + x[(i, 1)] + ((i * 31) % 17) as f64 / 17.0)
            .collect();
        let (_, history) = fit_least_squares(&x, &y, params(50, 3, 0.3, 5));
        for w in history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} > {}", w[1], w[0]);
        }
        assert!(history.last().unwrap() < &history[0]);
    }

    #[test]
    fn logistic_learns_separable_labels() {
        let n = 100;
        let x = DenseMatrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let d: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i >= 50))).collect();
        let model = fit_logistic(&x, &d, params(30, 1, 0.5, 5));
        assert!(model.predict(&[10.0]) < 0.1);
        assert!(model.predict(&[90.0]) > 0.9);
    }
}
