use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ModelKind, Outcome, ParamVector, Partition, TaskDataset};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::loss::NuisanceOracle;
use crate::nuisance::{sigmoid, Predictor};
use crate::rng::RngHandle;

/// Synthetic study design.
///
/// Task `j` (zero-based) has `n0 + n_step·(j+1)` rows and `p0 + p_step·(j+1)`
/// covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub model: ModelKind,
    pub m: usize,
    pub k: usize,
    pub delta: f64,
    pub n0: usize,
    pub n_step: usize,
    pub p0: usize,
    pub p_step: usize,
    pub xi_max: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Plm,
            m: 20,
            k: 3,
            delta: 1.0 / 3.0,
            n0: 400,
            n_step: 10,
            p0: 5,
            p_step: 1,
            xi_max: 0.0,
            seed: 0,
        }
    }
}

impl DgpConfig {
    /// Sample sizes of the full-scale study: `3200 + 80j`.
    pub fn full_scale(model: ModelKind, delta: f64) -> Self {
        Self {
            model,
            delta,
            n0: 3200,
            n_step: 80,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.m {
            return Err(Error::InvalidConfig(format!(
                "need 1 ≤ K ≤ m, got K = {}, m = {}",
                self.k, self.m
            )));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidConfig(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.xi_max >= 0.0) {
            return Err(Error::InvalidConfig(format!("xi_max must be nonnegative, got {}", self.xi_max)));
        }
        let p_min = self.p0 + self.p_step;
        let needed = if self.model == ModelKind::Plm { 1 } else { 5 };
        if p_min < needed {
            return Err(Error::InvalidConfig(format!(
                "the propensity uses x1..x5, so p must be at least {needed}"
            )));
        }
        Ok(())
    }

    pub fn n_of(&self, task: usize) -> usize {
        self.n0 + self.n_step * (task + 1)
    }

    pub fn p_of(&self, task: usize) -> usize {
        self.p0 + self.p_step * (task + 1)
    }

    /// Cluster centroids `β_k = kδ − (K+1)δ/2`, `k = 1..K`.
    pub fn centroids(&self) -> Vec<f64> {
        (1..=self.k)
            .map(|k| k as f64 * self.delta - (self.k as f64 + 1.0) * self.delta / 2.0)
            .collect()
    }
}

/// Ground truth of one synthetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub model: ModelKind,
    pub cluster_of: Vec<usize>,
    pub beta_star: Vec<ParamVector>,
    pub theta_star: Vec<ParamVector>,
}

impl SimTruth {
    pub fn partition(&self) -> Partition {
        Partition::from_labels(&self.cluster_of)
    }

    /// The true nuisance functions of task `j`.
    pub fn task(&self, j: usize) -> TaskTruth {
        TaskTruth {
            model: self.model,
            theta: self.theta_star[j].0[0],
        }
    }
}

/// Uniform cluster labels, redrawn until no cluster is empty.
pub fn assign_clusters(cfg: &DgpConfig, rng: &RngHandle) -> Result<SimTruth> {
    cfg.validate()?;
    let mut gen = rng.generator();
    let mut labels = Vec::new();
    let mut ok = false;
    for _ in 0..100 {
        labels = (0..cfg.m).map(|_| gen.random_range(0..cfg.k)).collect::<Vec<usize>>();
        if (0..cfg.k).all(|k| labels.contains(&k)) {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::EmptyClusterRetry(100));
    }
    let beta: Vec<f64> = cfg.centroids();
    let theta_star = labels
        .iter()
        .map(|&k| {
            // Uniform in the ξ-ball, which for a scalar is an interval.
            let u = if cfg.xi_max > 0.0 {
                gen.random_range(-cfg.xi_max..=cfg.xi_max)
            } else {
                0.0
            };
            ParamVector::scalar(beta[k] + u)
        })
        .collect();
    Ok(SimTruth {
        model: cfg.model,
        cluster_of: labels,
        beta_star: beta.into_iter().map(ParamVector::scalar).collect(),
        theta_star,
    })
}

/// `(1/5) tanh(Σ x_r)`.
pub fn h_fn(x: &[f64]) -> f64 {
    0.2 * x.iter().sum::<f64>().tanh()
}

/// `Σ_r (−0.8)^r σ(x_r)`, `r = 1..p`.
pub fn g_fn(x: &[f64]) -> f64 {
    signed_sigmoid_sum(x, -0.8)
}

/// `σ(x₄x₅ − x₁x₂)` clipped to `[0.05, 0.95]`.
pub fn propensity_fn(x: &[f64]) -> f64 {
    sigmoid(x[3] * x[4] - x[0] * x[1]).clamp(0.05, 0.95)
}

pub fn mu0_fn(x: &[f64]) -> f64 {
    signed_sigmoid_sum(x, 0.7)
}

pub fn mu1_fn(x: &[f64]) -> f64 {
    signed_sigmoid_sum(x, -0.7)
}

fn signed_sigmoid_sum(x: &[f64], base: f64) -> f64 {
    let mut w = 1.0;
    x.iter()
        .map(|&v| {
            w *= base;
            w * sigmoid(v)
        })
        .sum()
}

/// True nuisances of one synthetic task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskTruth {
    pub model: ModelKind,
    pub theta: f64,
}

impl NuisanceOracle for TaskTruth {
    fn model(&self) -> ModelKind {
        self.model
    }

    fn theta(&self) -> Vec<f64> {
        vec![self.theta]
    }

    fn nuisance(&self, name: &str) -> Option<Box<dyn Predictor + '_>> {
        let theta = self.theta;
        let f: Box<dyn Predictor> = match (self.model, name) {
            (ModelKind::Plm, "h") => Box::new(h_fn),
            (ModelKind::Plm, "m") => Box::new(move |x: &[f64]| theta * h_fn(x) + g_fn(x)),
            (ModelKind::Plm, "g") => Box::new(g_fn),
            (ModelKind::Ate | ModelKind::Did, "pi") => Box::new(propensity_fn),
            (ModelKind::Ate, "m1") => Box::new(move |x: &[f64]| theta + g_fn(x)),
            (ModelKind::Ate, "m0") => Box::new(g_fn),
            (ModelKind::Did, "m") => Box::new(|x: &[f64]| mu1_fn(x) - mu0_fn(x)),
            _ => return None,
        };
        Some(f)
    }
}

/// Draws task `j` of the study.
pub fn generate_task(cfg: &DgpConfig, truth: &SimTruth, j: usize, rng: &RngHandle) -> Result<TaskDataset> {
    if j >= cfg.m || j >= truth.theta_star.len() {
        return Err(Error::InvalidConfig(format!("task {j} out of range")));
    }
    let (n, p) = (cfg.n_of(j), cfg.p_of(j));
    let theta = truth.theta_star[j].0[0];
    let mut gen = rng.generator();
    let mut normal = || -> f64 { gen.sample(StandardNormal) };
    let xs: Vec<f64> = (0..n * p).map(|_| normal()).collect();
    let x = DenseMatrix::from_vec(n, p, xs)?;
    let mut treatment = Vec::with_capacity(n);
    let data = match cfg.model {
        ModelKind::Plm => {
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let row = x.row(i);
                let t = h_fn(row) + normal();
                treatment.push(t);
                y.push(theta * t + g_fn(row) + normal());
            }
            Outcome::Single(y)
        }
        ModelKind::Ate => {
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let row = x.row(i);
                let d = bernoulli(&mut gen, propensity_fn(row));
                treatment.push(d);
                y.push(theta * d + g_fn(row) + gen.sample::<f64, _>(StandardNormal));
            }
            Outcome::Single(y)
        }
        ModelKind::Did => {
            let (mut pre, mut post) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for i in 0..n {
                let row = x.row(i);
                let d = bernoulli(&mut gen, propensity_fn(row));
                treatment.push(d);
                let e0: f64 = gen.sample(StandardNormal);
                let e1: f64 = gen.sample(StandardNormal);
                pre.push(mu0_fn(row) + e0);
                post.push(theta * d + mu1_fn(row) + e1);
            }
            Outcome::PrePost { pre, post }
        }
    };
    TaskDataset::new(j, data, treatment, x)
}

fn bernoulli<R: Rng>(gen: &mut R, p: f64) -> f64 {
    if gen.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}
