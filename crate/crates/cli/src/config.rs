//! JSON run configuration.
//!
//! Every field has a default, so `{}` is a valid configuration. A minimal
//! `fit` configuration only names its columns:
//!
//! ```json
//! {
//!   "model": "ate",
//!   "data_source": { "task_col": "state", "outcome_cols": ["y"], "treatment_col": "d" }
//! }
//! ```

use std::path::{Path, PathBuf};

use orthofuse::fusion::SolverConfig;
use orthofuse::nuisance::NuisanceLearnerSpec;
use orthofuse::sim::{DgpConfig, Method, MonteCarloConfig};
use orthofuse::{FusionHyperparams, ModelKind, PipelineConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Fit,
    InferReport,
}

/// Where the data lives and which columns play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    pub path: Option<PathBuf>,
    pub task_col: String,
    /// One column, or `[pre, post]` for DID.
    pub outcome_cols: Vec<String>,
    pub treatment_col: String,
    /// Empty selects every remaining column.
    pub covariate_cols: Vec<String>,
    pub min_task_rows: usize,
}

impl Default for DataSource {
    fn default() -> Self {
        Self {
            path: None,
            task_col: "task".into(),
            outcome_cols: vec!["y".into()],
            treatment_col: "t".into(),
            covariate_cols: Vec::new(),
            min_task_rows: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Set by the subcommand when absent; a mismatch is a usage error.
    pub mode: Option<Mode>,
    pub model: ModelKind,
    /// Simulation design; its `model` and `seed` are taken from this config.
    pub dgp: DgpConfig,
    pub data_source: DataSource,
    pub learner: NuisanceLearnerSpec,
    pub clip: (f64, f64),
    pub fusion: FusionHyperparams,
    pub solver: SolverConfig,
    pub crossfit: usize,
    pub level: f64,
    pub refit: bool,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            mode: None,
            model: p.model,
            dgp: DgpConfig::default(),
            data_source: DataSource::default(),
            learner: p.learner,
            clip: p.clip,
            fusion: p.fusion,
            solver: p.solver,
            crossfit: p.crossfit,
            level: p.level,
            refit: p.refit,
            methods: vec![Method::Adaptive, Method::Personalized, Method::Uniform(0.01)],
            reps: 100,
            output_dir: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The configuration as recorded next to results: without `output_dir`,
    /// so the same run written to two places is recorded identically.
    pub fn recorded(&self) -> Self {
        Self {
            output_dir: None,
            ..self.clone()
        }
    }

    /// Hex SHA-256 of the compact JSON form of [`RunConfig::recorded`].
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&self.recorded())?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            model: self.model,
            learner: self.learner.clone(),
            clip: self.clip,
            fusion: self.fusion.clone(),
            solver: self.solver.clone(),
            crossfit: self.crossfit,
            level: self.level,
            refit: self.refit,
        }
    }

    pub fn monte_carlo(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            dgp: DgpConfig {
                model: self.model,
                seed: self.seed,
                ..self.dgp.clone()
            },
            pipeline: self.pipeline(),
            methods: self.methods.clone(),
            reps: self.reps,
        }
    }

    /// Fixes the mode from the subcommand, rejecting a conflicting one.
    pub fn resolve_mode(&mut self, mode: Mode) -> Result<()> {
        match self.mode {
            Some(m) if m != mode => Err(CliError::Usage(format!(
                "config declares mode {m:?} but the subcommand runs {mode:?}"
            ))),
            _ => {
                self.mode = Some(mode);
                Ok(())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        if self.mode == Some(Mode::Simulate) {
            self.monte_carlo().dgp.validate()?;
            if self.reps == 0 {
                return Err(CliError::Usage("reps must be at least 1".into()));
            }
            if self.methods.is_empty() {
                return Err(CliError::Usage("no methods selected".into()));
            }
        }
        let expected = if self.model == ModelKind::Did { 2 } else { 1 };
        if self.mode == Some(Mode::Fit) && self.data_source.outcome_cols.len() != expected {
            return Err(CliError::Usage(format!(
                "{} needs {expected} outcome column(s), got {}",
                self.model,
                self.data_source.outcome_cols.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"lamda": 1}"#).is_err());
    }

    #[test]
    fn did_needs_two_outcomes() {
        let mut cfg = RunConfig {
            model: ModelKind::Did,
            ..RunConfig::default()
        };
        cfg.resolve_mode(Mode::Fit).unwrap();
        assert!(cfg.validate().is_err());
        cfg.data_source.outcome_cols = vec!["y0".into(), "y1".into()];
        cfg.validate().unwrap();
    }

    #[test]
    fn mode_conflicts_are_usage_errors() {
        let mut cfg = RunConfig {
            mode: Some(Mode::Fit),
            ..RunConfig::default()
        };
        assert_eq!(cfg.resolve_mode(Mode::Simulate).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
        let moved = RunConfig {
            output_dir: Some("elsewhere".into()),
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), moved.hash().unwrap());
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            prop_oneof![Just(ModelKind::Plm), Just(ModelKind::Ate), Just(ModelKind::Did)],
            1usize..50,
            0.01f64..5.0,
            2usize..6,
            0.5f64..0.999,
            any::<bool>(),
            any::<u64>(),
            proptest::collection::vec(0.0f64..10.0, 0..4),
            (1usize..300, 1usize..6),
        )
            .prop_map(|(model, m, delta, crossfit, level, refit, seed, lams, (trees, depth))| {
                let mut cfg = RunConfig {
                    model,
                    crossfit,
                    level,
                    refit,
                    seed,
                    methods: lams.into_iter().map(Method::Fixed).collect(),
                    ..RunConfig::default()
                };
                cfg.dgp.m = m;
                cfg.dgp.delta = delta;
                cfg.learner.trees = trees;
                cfg.learner.max_depth = depth;
                cfg
            })
    }

    proptest! {
        #[test]
        fn json_round_trip(cfg in arb_config()) {
            let text = cfg.to_json().unwrap();
            let back: RunConfig = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_json().unwrap(), text);
        }
    }
}
