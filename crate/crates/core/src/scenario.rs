//! Experiment configurations and the built-in catalog of four settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{mirror_antisymmetric_spec, mirror_invariant_spec, DataGenSpec, TransformSet};
use crate::error::{invalid, Result};
use crate::numerics::DEFAULT_QUADRATURE_ORDER;
use crate::tempering::ModelSpec;

pub const DEFAULT_LAMBDA_GRID: [f64; 11] = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0];
pub const DEFAULT_SEEDS: usize = 20;
pub const DEFAULT_N_TRAIN: usize = 5;

/// Monte Carlo budgets: `ν` draws, posterior draws and dataset resamples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McCounts {
    pub nu_samples: usize,
    pub posterior_samples: usize,
    pub resamples: usize,
}

impl Default for McCounts {
    fn default() -> Self {
        Self {
            nu_samples: 5000,
            posterior_samples: 100_000,
            resamples: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub data_gen: DataGenSpec,
    pub model: ModelSpec,
    pub n_train: usize,
    pub lambda_grid: Vec<f64>,
    pub seeds: usize,
    pub mc_counts: McCounts,
    pub quadrature_order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transforms: Option<TransformSet>,
}

impl ScenarioConfig {
    /// A configuration with the default grid, seed count and budgets.
    pub fn with_defaults(name: &str, data_gen: DataGenSpec, model: ModelSpec) -> Self {
        Self {
            name: name.to_string(),
            data_gen,
            model,
            n_train: DEFAULT_N_TRAIN,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            seeds: DEFAULT_SEEDS,
            mc_counts: McCounts::default(),
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            transforms: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data_gen.validate()?;
        self.model.validate()?;
        if self.lambda_grid.is_empty() {
            return invalid("lambda_grid is empty");
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return invalid("lambda_grid values must be finite and nonnegative");
        }
        if self.lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("lambda_grid must be strictly ascending");
        }
        if !self.lambda_grid.contains(&1.0) {
            return invalid("lambda_grid must contain 1");
        }
        if self.seeds == 0 {
            return invalid("seeds must be at least 1");
        }
        if self.n_train == 0 {
            return invalid("n_train must be at least 1");
        }
        if self.quadrature_order == 0 {
            return invalid("quadrature_order must be positive");
        }
        let mc = &self.mc_counts;
        if mc.nu_samples < 2 || mc.posterior_samples < 2 || mc.resamples < 2 {
            return invalid("every Monte Carlo count must be at least 2");
        }
        if let Some(t) = &self.transforms {
            t.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Index of `λ = 1` in the grid.
    pub fn unit_index(&self) -> Option<usize> {
        self.lambda_grid.iter().position(|l| *l == 1.0)
    }
}

/// No misspecification, two misspecified likelihoods and a misspecified prior, in that order.
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    let truth = || DataGenSpec::all_ones(10, 1.0).expect("valid truth");
    let model = |k, s2, pv| ModelSpec::isotropic(k, s2, pv).expect("valid model");
    vec![
        ScenarioConfig::with_defaults("no-misspec", truth(), model(10, 1.0, 2.0)),
        ScenarioConfig::with_defaults("misspec-likelihood-I", truth(), model(20, 0.15, 2.0)),
        ScenarioConfig::with_defaults("misspec-likelihood-II", truth(), model(10, 3.0, 2.0)),
        ScenarioConfig::with_defaults("misspec-prior", truth(), model(10, 1.0, 0.5)),
    ]
}

/// Catalog lookup, case-insensitive.
pub fn builtin_scenario(name: &str) -> Option<ScenarioConfig> {
    builtin_scenarios()
        .into_iter()
        .find(|c| c.name.eq_ignore_ascii_case(name))
}

/// Truth used by the augmentation comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DaTruth {
    /// `m(x) = m(−x)`: mirroring preserves labels.
    MirrorInvariant,
    /// `m(x) = −m(x)` under mirroring: the augmentation is label-corrupting.
    MirrorAntisymmetric,
}

/// The no-misspecification model on a truth chosen for the augmentation comparison.
pub fn da_scenario(truth: DaTruth) -> Result<ScenarioConfig> {
    let data_gen = match truth {
        DaTruth::MirrorInvariant => mirror_invariant_spec(10, 1.0)?,
        DaTruth::MirrorAntisymmetric => mirror_antisymmetric_spec(10, 1.0)?,
    };
    let name = match truth {
        DaTruth::MirrorInvariant => "da-mirror-invariant",
        DaTruth::MirrorAntisymmetric => "da-mirror-antisymmetric",
    };
    let mut cfg = ScenarioConfig::with_defaults(name, data_gen, ModelSpec::isotropic(10, 1.0, 2.0)?);
    cfg.transforms = Some(TransformSet::mirror());
    Ok(cfg)
}
