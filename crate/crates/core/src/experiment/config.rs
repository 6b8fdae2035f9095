use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{whole_steps, DiffusionConvention, LevelGrid, OuParams};
use crate::verification::{Calibration, CalibrationThresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Calibrated,
    Underdispersed,
    Overdispersed,
    Biased,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        ScenarioName::Calibrated,
        ScenarioName::Underdispersed,
        ScenarioName::Overdispersed,
        ScenarioName::Biased,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::Calibrated => "calibrated",
            ScenarioName::Underdispersed => "underdispersed",
            ScenarioName::Overdispersed => "overdispersed",
            ScenarioName::Biased => "biased",
        }
    }

    /// The PIT signature the scenario is built to produce.
    pub fn expected(&self) -> Calibration {
        match self {
            ScenarioName::Calibrated => Calibration::Calibrated,
            ScenarioName::Underdispersed => Calibration::Underdispersed,
            ScenarioName::Overdispersed => Calibration::Overdispersed,
            ScenarioName::Biased => Calibration::Biased,
        }
    }

    /// Forecast model `(alpha, mu, sigma2)` of the standard scenario.
    pub fn default_model(&self) -> ModelSpec {
        let (alpha, mu, sigma2) = match self {
            ScenarioName::Calibrated => (0.1, 0.0, 0.1),
            ScenarioName::Underdispersed => (0.1, 0.0, 0.02),
            ScenarioName::Overdispersed => (0.1, 0.0, 0.5),
            ScenarioName::Biased => (0.4, 0.2, 0.1),
        };
        ModelSpec { alpha, mu, sigma2 }
    }
}

impl std::fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

/// OU parameters as written in a config file; the diffusion convention is
/// set once for the whole experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub alpha: f64,
    pub mu: f64,
    pub sigma2: f64,
}

impl ModelSpec {
    pub fn to_params(self, convention: DiffusionConvention) -> Result<OuParams> {
        OuParams::with_convention(self.alpha, self.mu, self.sigma2, convention)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: ScenarioName,
    pub forecast: ModelSpec,
}

/// The experiment config file. `seed`, `horizon`, `c_max`, `target` and
/// `scenarios` are required; everything else has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Simulated time `T`; observations at `t_k = k * observation_stride`.
    pub horizon: f64,
    /// Per-level compute budget for the fixed-budget sizing rule.
    pub c_max: f64,
    pub target: ModelSpec,
    pub scenarios: Vec<ScenarioSpec>,

    #[serde(default = "defaults::levels")]
    pub levels: usize,
    #[serde(default = "defaults::base_step")]
    pub base_step: f64,
    #[serde(default = "defaults::refinement")]
    pub refinement: usize,
    #[serde(default = "defaults::observation_stride")]
    pub observation_stride: f64,
    /// Euler–Maruyama step of the observed trajectory.
    #[serde(default = "defaults::observation_step")]
    pub observation_step: f64,
    /// Forecast members per level-0 sample.
    #[serde(default = "defaults::alpha")]
    pub alpha: usize,
    /// MLPIT histogram bins.
    #[serde(default = "defaults::bins")]
    pub bins: usize,
    /// Bins of the finest-ensemble PIT histogram; `N_L + 1` when absent.
    #[serde(default)]
    pub finest_bins: Option<usize>,
    /// Leading observation times excluded from the histograms.
    #[serde(default)]
    pub burn_in: usize,
    /// Initial state of every member and of the observed trajectory.
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub convention: DiffusionConvention,
    #[serde(default = "defaults::thresholds")]
    pub thresholds: CalibrationThresholds,
    /// Also write `hierarchy.csv` with every member at every observation time.
    #[serde(default)]
    pub write_hierarchy: bool,
}

mod defaults {
    pub fn levels() -> usize {
        4
    }
    pub fn base_step() -> f64 {
        0.5
    }
    pub fn refinement() -> usize {
        2
    }
    pub fn observation_stride() -> f64 {
        1.0
    }
    pub fn observation_step() -> f64 {
        1.0 / 32.0
    }
    pub fn alpha() -> usize {
        8
    }
    pub fn bins() -> usize {
        20
    }
    pub fn thresholds() -> crate::verification::CalibrationThresholds {
        super::SERIES_THRESHOLDS
    }
}

/// Classifier thresholds for PIT histograms of one autocorrelated observed
/// trajectory. Serial correlation of the PIT values (decorrelation time
/// `1/alpha = 10` observation intervals) inflates bin-count noise well beyond
/// the i.i.d. binomial level, so the flatness and skew limits are set from
/// pilot replications rather than from counting statistics.
pub const SERIES_THRESHOLDS: CalibrationThresholds = CalibrationThresholds {
    max_relative_deviation: 0.5,
    skew: 0.12,
    underdispersed_ratio: 2.0,
    overdispersed_ratio: 0.5,
};

pub const DESK_HORIZON: f64 = 4_000.0;
pub const DESK_BUDGET: f64 = 1.536e6;
pub const FULL_HORIZON: f64 = 40_000.0;
pub const FULL_BUDGET: f64 = 1.536e7;
pub const DEFAULT_SEED: u64 = 1;

impl Default for ExperimentConfig {
    /// The four standard scenarios at desk scale.
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            horizon: DESK_HORIZON,
            c_max: DESK_BUDGET,
            target: ModelSpec {
                alpha: 0.1,
                mu: 0.0,
                sigma2: 0.1,
            },
            scenarios: ScenarioName::ALL
                .iter()
                .map(|&name| ScenarioSpec {
                    name,
                    forecast: name.default_model(),
                })
                .collect(),
            levels: defaults::levels(),
            base_step: defaults::base_step(),
            refinement: defaults::refinement(),
            observation_stride: defaults::observation_stride(),
            observation_step: defaults::observation_step(),
            alpha: defaults::alpha(),
            bins: defaults::bins(),
            finest_bins: None,
            burn_in: 0,
            x0: 0.0,
            convention: DiffusionConvention::default(),
            thresholds: SERIES_THRESHOLDS,
            write_hierarchy: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Switches to the long run: `T = 40000` with the budget scaled to match.
    pub fn full_scale(mut self) -> Self {
        self.c_max *= FULL_HORIZON / self.horizon;
        self.horizon = FULL_HORIZON;
        self
    }

    pub fn scenario(&self, name: ScenarioName) -> Result<ScenarioConfig> {
        let spec = self
            .scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("scenario `{name}` is not configured")))?;
        self.build_scenario(spec)
    }

    pub fn all_scenarios(&self) -> Result<Vec<ScenarioConfig>> {
        self.scenarios
            .iter()
            .map(|s| self.build_scenario(s))
            .collect()
    }

    fn build_scenario(&self, spec: &ScenarioSpec) -> Result<ScenarioConfig> {
        let cfg = ScenarioConfig {
            name: spec.name,
            forecast: spec.forecast.to_params(self.convention)?,
            target: self.target.to_params(self.convention)?,
            horizon: self.horizon,
            observation_stride: self.observation_stride,
            observation_step: self.observation_step,
            levels: self.levels,
            base_step: self.base_step,
            refinement: self.refinement,
            c_max: self.c_max,
            alpha: self.alpha,
            bins: self.bins,
            finest_bins: self.finest_bins,
            burn_in: self.burn_in,
            x0: self.x0,
            seed: self.seed,
            thresholds: self.thresholds,
            write_hierarchy: self.write_hierarchy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("`scenarios` is empty".to_string()));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            if self.scenarios[..i].iter().any(|t| t.name == s.name) {
                return Err(Error::Config(format!(
                    "scenario `{}` is listed twice",
                    s.name
                )));
            }
        }
        self.all_scenarios().map(|_| ())
    }
}

/// Everything needed to run one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    pub forecast: OuParams,
    pub target: OuParams,
    pub horizon: f64,
    pub observation_stride: f64,
    pub observation_step: f64,
    /// Finest level `L`.
    pub levels: usize,
    pub base_step: f64,
    pub refinement: usize,
    pub c_max: f64,
    pub alpha: usize,
    pub bins: usize,
    pub finest_bins: Option<usize>,
    pub burn_in: usize,
    pub x0: f64,
    pub seed: u64,
    pub thresholds: CalibrationThresholds,
    pub write_hierarchy: bool,
}

impl ScenarioConfig {
    pub fn grids(&self) -> Result<Vec<LevelGrid>> {
        LevelGrid::hierarchy(self.base_step, self.refinement, self.levels)
    }

    /// `N_y` before burn-in.
    pub fn observation_count(&self) -> Result<usize> {
        whole_steps(self.horizon, self.observation_stride).map_err(|_| {
            Error::Config(format!(
                "horizon {} is not a multiple of the observation stride {}",
                self.horizon, self.observation_stride
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("scenario `{}`: {msg}", self.name)));
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return fail(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.alpha == 0 {
            return fail("alpha must be at least 1".to_string());
        }
        if self.bins == 0 || self.finest_bins == Some(0) {
            return fail("bin counts must be positive".to_string());
        }
        let n_obs = self.observation_count()?;
        if self.burn_in >= n_obs {
            return fail(format!(
                "burn-in {} leaves none of the {n_obs} observation times",
                self.burn_in
            ));
        }
        let grids = self.grids().map_err(|e| Error::Config(e.to_string()))?;
        for g in &grids {
            let step = if g.level == 0 {
                g.step
            } else {
                g.coarse_step()
            };
            if whole_steps(self.observation_stride, step).is_err() {
                return fail(format!(
                    "observation stride {} is not a multiple of the level-{} step {step}",
                    self.observation_stride, g.level
                ));
            }
        }
        if whole_steps(self.observation_stride, self.observation_step).is_err() {
            return fail(format!(
                "observation stride {} is not a multiple of the observation step {}",
                self.observation_stride, self.observation_step
            ));
        }
        crate::mlmc::fixed_budget_sizes(self.c_max, self.horizon, &grids)
            .map_err(|e| Error::Config(format!("scenario `{}`: {e}", self.name)))?;
        Ok(())
    }
}
