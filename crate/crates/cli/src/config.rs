//! Versioned JSON run configuration. Unknown keys are rejected; flags
//! override file values.

use std::path::Path;

use extrabound::forest::ForestParams;
use extrabound::tuning::{Loss, TuningGrid};
use serde::{Deserialize, Serialize};

use crate::errors::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub version: Option<u32>,
    /// Taylor order of the bounds (q > 1 requires one-dimensional data).
    #[serde(default)]
    pub q: Option<usize>,
    /// Fixed local-polynomial penalty; together with `forest` it skips tuning.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Fixed forest parameters for the derivative pipeline.
    #[serde(default)]
    pub forest: Option<ForestConfig>,
    /// Forest parameters for the built-in pilot regression.
    #[serde(default)]
    pub pilot_forest: Option<ForestConfig>,
    /// Tuning grid (used when lambda/forest are not both fixed).
    #[serde(default)]
    pub grid: Option<GridConfig>,
    /// Miscoverage level for intervals and quantile pilots.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Bootstrap replicate count.
    #[serde(default)]
    pub replicates: Option<usize>,
    /// Per-target anchor subselection count.
    #[serde(default)]
    pub anchors: Option<usize>,
    /// Folds for cross-validated residual scale.
    #[serde(default)]
    pub folds: Option<usize>,
    /// Explicit residual scale (bypasses the cross-validation).
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    #[serde(default)]
    pub n_trees: Option<usize>,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default)]
    pub min_samples_leaf: Option<usize>,
    #[serde(default)]
    pub impurity_tol: Option<f64>,
    #[serde(default)]
    pub mtry: Option<usize>,
    #[serde(default)]
    pub bootstrap: Option<bool>,
}

impl ForestConfig {
    pub fn to_params(&self, seed: u64) -> ForestParams {
        let defaults = ForestParams::default();
        ForestParams {
            n_trees: self.n_trees.unwrap_or(defaults.n_trees),
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf.unwrap_or(defaults.min_samples_leaf),
            impurity_tol: self.impurity_tol.unwrap_or(defaults.impurity_tol),
            mtry: self.mtry,
            bootstrap: self.bootstrap.unwrap_or(defaults.bootstrap),
            seed,
        }
    }
}

/// Grid over forest regularization (impurity tolerances, decreasing
/// regularization) and penalties (decreasing).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_impurity_grid")]
    pub impurity_tol: Vec<f64>,
    #[serde(default = "default_lambda_grid")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// `"squared"` (default) or `"pinball:<level>"`.
    #[serde(default)]
    pub loss: Option<String>,
}

fn default_impurity_grid() -> Vec<f64> {
    vec![100.0, 10.0, 1.0, 0.1, 0.01]
}

fn default_lambda_grid() -> Vec<f64> {
    vec![10.0, 1.0, 0.1, 0.01, 0.001, 0.0]
}

fn default_tol() -> f64 {
    1.0
}

fn default_folds() -> usize {
    5
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            impurity_tol: default_impurity_grid(),
            lambdas: default_lambda_grid(),
            tol: default_tol(),
            folds: default_folds(),
            loss: None,
        }
    }
}

impl GridConfig {
    pub fn to_grid(&self, base: &ForestConfig, seed: u64) -> CliResult<TuningGrid> {
        let loss = match self.loss.as_deref() {
            None | Some("squared") => Loss::SquaredError,
            Some(other) => {
                if let Some(level) = other.strip_prefix("pinball:") {
                    let level: f64 = level.parse().map_err(|_| {
                        CliError::Validation(format!("bad pinball level in loss {other:?}"))
                    })?;
                    Loss::Pinball(level)
                } else {
                    return Err(CliError::Validation(format!(
                        "unknown loss {other:?}; use \"squared\" or \"pinball:<level>\""
                    )));
                }
            }
        };
        let forest_params = self
            .impurity_tol
            .iter()
            .map(|&tol| {
                let mut p = base.to_params(seed);
                p.impurity_tol = tol;
                p
            })
            .collect();
        Ok(TuningGrid {
            forest_params,
            penalties: self.lambdas.clone(),
            tol: self.tol,
            folds: self.folds,
            loss,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_sim_n")]
    pub n: Vec<usize>,
    #[serde(default = "default_sim_d")]
    pub d: usize,
    #[serde(default = "default_eval")]
    pub eval_in: usize,
    #[serde(default = "default_eval")]
    pub eval_out: usize,
    /// Full-scale replication (50 repetitions) instead of the desk default.
    #[serde(default)]
    pub full: bool,
}

fn default_reps() -> usize {
    20
}
fn default_sim_n() -> Vec<usize> {
    vec![100]
}
fn default_sim_d() -> usize {
    2
}
fn default_eval() -> usize {
    200
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            reps: default_reps(),
            n: default_sim_n(),
            d: default_sim_d(),
            eval_in: default_eval(),
            eval_out: default_eval(),
            full: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if let Some(v) = config.version {
            if v != CONFIG_VERSION {
                return Err(CliError::Validation(format!(
                    "{}: unsupported config version {v} (this build reads version {CONFIG_VERSION})",
                    path.display()
                )));
            }
        }
        if let Some(alpha) = config.alpha {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(CliError::Validation(format!(
                    "alpha must lie in (0, 1), got {alpha}"
                )));
            }
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"version":1,"surprise":3}"#);
        assert!(err.is_err());
    }

    #[test]
    fn grid_defaults_follow_documented_values() {
        let grid = GridConfig::default();
        assert_eq!(grid.impurity_tol, vec![100.0, 10.0, 1.0, 0.1, 0.01]);
        assert_eq!(grid.lambdas, vec![10.0, 1.0, 0.1, 0.01, 0.001, 0.0]);
        assert_eq!(grid.tol, 1.0);
        assert_eq!(grid.folds, 5);
    }
}
