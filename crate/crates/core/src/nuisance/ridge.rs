use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{dot, solve_spd, DenseMatrix};

/// Ridge regression on centered covariates; the intercept is unpenalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct RidgeModel {
    intercept: f64,
    coef: Vec<f64>,
}

impl RidgeModel {
    pub fn fit(x: &DenseMatrix, y: &[f64], l2_penalty: f64) -> Result<Self> {
        let (n, p) = (x.rows(), x.cols());
        let nf = n as f64;
        let x_mean: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / nf)
            .collect();
        let y_mean = y.iter().sum::<f64>() / nf;
        let mut gram = DenseMatrix::zeros(p, p);
        let mut xty = vec![0.0; p];
        let mut centered = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                centered[j] = x[(i, j)] - x_mean[j];
            }
            let yc = y[i] - y_mean;
            for a in 0..p {
                xty[a] += centered[a] * yc;
                for b in 0..p {
                    gram[(a, b)] += centered[a] * centered[b];
                }
            }
        }
        for a in 0..p {
            gram[(a, a)] += l2_penalty;
        }
        let coef = if xty.iter().all(|v| *v == 0.0) {
            vec![0.0; p]
        } else {
            solve_spd(&gram, &xty)?
        };
        let intercept = y_mean - dot(&x_mean, &coef);
        Ok(Self { intercept, coef })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.coef, x)
    }
}
