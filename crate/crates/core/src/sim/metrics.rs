use std::collections::BTreeMap;

use crate::data::{ParamVector, Partition};
use crate::error::{Error, Result};

fn squared_error(a: &ParamVector, b: &ParamVector) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `(m⁻¹ Σ_j ‖θ̂_j − θ*_j‖²)^{1/2}`.
pub fn rmse(theta_hat: &[ParamVector], theta_star: &[ParamVector]) -> Result<f64> {
    if theta_hat.len() != theta_star.len() || theta_hat.is_empty() {
        return Err(Error::DimensionMismatch("rmse needs equal, nonempty inputs".into()));
    }
    let total: f64 = theta_hat.iter().zip(theta_star).map(|(a, b)| squared_error(a, b)).sum();
    Ok((total / theta_hat.len() as f64).sqrt())
}

/// Error weighted by each task's true-cluster sample size `N_{q(j)}`.
pub fn wrmse(theta_hat: &[ParamVector], theta_star: &[ParamVector], cluster_sizes: &[f64]) -> Result<f64> {
    if theta_hat.len() != theta_star.len() || theta_hat.len() != cluster_sizes.len() || theta_hat.is_empty() {
        return Err(Error::DimensionMismatch("wrmse needs equal, nonempty inputs".into()));
    }
    let b: f64 = cluster_sizes.iter().sum();
    let total: f64 = theta_hat
        .iter()
        .zip(theta_star)
        .zip(cluster_sizes)
        .map(|((a, s), n)| n * squared_error(a, s))
        .sum();
    Ok((total / b).sqrt())
}

fn choose2(n: usize) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

/// Adjusted Rand index from the contingency table.
///
/// Computed as a ratio of exact integers with one final division. When the
/// chance-corrected denominator vanishes the index is 1 for identical
/// partitions and 0 otherwise.
pub fn adjusted_rand_index(truth: &Partition, estimate: &Partition) -> Result<f64> {
    let m = truth.n_tasks();
    if estimate.n_tasks() != m {
        return Err(Error::InvalidPartition(format!(
            "partitions cover {} and {} tasks",
            m,
            estimate.n_tasks()
        )));
    }
    if m < 2 {
        return Err(Error::SingleElement);
    }
    let (lt, le) = (truth.labels(), estimate.labels());
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&a, &b) in lt.iter().zip(&le) {
        *table.entry((a, b)).or_default() += 1;
    }
    let index: i128 = table.values().map(|&c| choose2(c)).sum();
    let rows: i128 = truth.clusters().iter().map(|c| choose2(c.len())).sum();
    let cols: i128 = estimate.clusters().iter().map(|c| choose2(c.len())).sum();
    let total = choose2(m);
    // Both sides multiplied by 2·C(m, 2).
    let num = 2 * (index * total - rows * cols);
    let den = (rows + cols) * total - 2 * rows * cols;
    if den == 0 {
        return Ok(if truth == estimate { 1.0 } else { 0.0 });
    }
    Ok(num as f64 / den as f64)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
