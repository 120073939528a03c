use std::path::Path;

use faustmann_core::diffusion::{DiffusionModel, ModelSpec};
use faustmann_core::expr::Expr;
use faustmann_core::meanfield::PayoffSpec;
use faustmann_core::simulation::SimConfig;
use faustmann_core::NumericsConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Auxiliary problem `sup_y (f(y) - K - E[∫ h]) / xi(y)` checked by `verify`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxiliarySpec {
    /// Reward as an expression in `x`.
    pub f: Expr,
    /// Running cost; zero when absent.
    #[serde(default)]
    pub h: Option<Expr>,
    /// Defaults to the payoff cost.
    #[serde(default, alias = "K")]
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    #[serde(default)]
    pub payoff: Option<PayoffSpec>,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default = "default_sim")]
    pub simulation: SimConfig,
    /// Threshold used by `simulate` and `solve-single` when given.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub auxiliary: Option<AuxiliarySpec>,
    /// Subcommands this scenario is meant for; informational.
    #[serde(default)]
    pub tasks: Vec<String>,
}

fn default_sim() -> SimConfig {
    SimConfig {
        paths: 10_000,
        horizon: 1e4,
        ..SimConfig::default()
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
        let sc: Scenario =
            serde_json::from_str(&text).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
        sc.model()
            .map_err(|e| Failure::parse(format!("{}: invalid model: {}", path.display(), e.message)))?;
        if sc.numerics.scan_points < 3 {
            return Err(Failure::parse(format!("{}: scan_points must be at least 3", path.display())));
        }
        if let Some(p) = &sc.payoff {
            if !(p.cost > 0.0) {
                return Err(Failure::parse(format!("{}: payoff cost must be positive", path.display())));
            }
        }
        Ok(sc)
    }

    pub fn label(&self, path: &Path) -> String {
        self.name.clone().unwrap_or_else(|| path.display().to_string())
    }

    pub fn model(&self) -> Result<DiffusionModel, Failure> {
        DiffusionModel::from_spec_with(&self.model, &self.numerics).map_err(Failure::solver)
    }

    pub fn payoff(&self) -> Result<&PayoffSpec, Failure> {
        self.payoff
            .as_ref()
            .ok_or_else(|| Failure::parse("scenario has no payoff section".to_string()))
    }
}
