//! Multilevel ensembles, telescoping-sum estimators and sample-size rules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::sde::{propagate_coupled_pair, propagate_single, LevelGrid, OuParams, TimeSpan};

/// A scalar function of the model state.
pub trait Observable: Sync {
    fn eval(&self, x: f64) -> f64;
}

impl<F: Fn(f64) -> f64 + Sync> Observable for F {
    fn eval(&self, x: f64) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Observable for Identity {
    fn eval(&self, x: f64) -> f64 {
        x
    }
}

/// Samples of one level at one time, in generation order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Ensemble(pub Vec<f64>);

impl Ensemble {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for Ensemble {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Positively coupled `(fine, coarse)` couples of one difference estimator.
/// `fine[i]` and `coarse[i]` share noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPairEnsemble {
    fine: Vec<f64>,
    coarse: Vec<f64>,
}

impl LevelPairEnsemble {
    pub fn new(fine: Vec<f64>, coarse: Vec<f64>) -> Result<Self> {
        if fine.len() != coarse.len() {
            return Err(Error::Structure(format!(
                "pair has {} fine and {} coarse samples",
                fine.len(),
                coarse.len()
            )));
        }
        Ok(Self { fine, coarse })
    }

    pub fn fine(&self) -> &[f64] {
        &self.fine
    }

    pub fn coarse(&self) -> &[f64] {
        &self.coarse
    }

    pub fn len(&self) -> usize {
        self.fine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine.is_empty()
    }

    pub fn push(&mut self, fine: f64, coarse: f64) {
        self.fine.push(fine);
        self.coarse.push(coarse);
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.fine, self.coarse)
    }
}

/// The level-0 ensemble and the coupled pair ensembles for levels `1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    level0: Ensemble,
    pairs: Vec<LevelPairEnsemble>,
}

impl Hierarchy {
    /// `pairs[l - 1]` holds the couples of level `l`.
    pub fn new(level0: Ensemble, pairs: Vec<LevelPairEnsemble>) -> Result<Self> {
        if level0.is_empty() {
            return Err(Error::Structure("level 0 ensemble is empty".to_string()));
        }
        if let Some(l) = pairs.iter().position(|p| p.is_empty()) {
            return Err(Error::Structure(format!("level {} has no couples", l + 1)));
        }
        Ok(Self { level0, pairs })
    }

    pub fn level0(&self) -> &Ensemble {
        &self.level0
    }

    pub fn pairs(&self) -> &[LevelPairEnsemble] {
        &self.pairs
    }

    /// Couples of level `l >= 1`.
    pub fn pair(&self, level: usize) -> &LevelPairEnsemble {
        &self.pairs[level - 1]
    }

    /// Finest level index `L`.
    pub fn max_level(&self) -> usize {
        self.pairs.len()
    }

    /// `N_l` for `l = 0..=L`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.level0.len())
            .chain(self.pairs.iter().map(LevelPairEnsemble::len))
            .collect()
    }
}

pub fn mc_mean(ensemble: &Ensemble, f: &impl Observable) -> Result<f64> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let sum: f64 = ensemble.values().iter().map(|&x| f.eval(x)).sum();
    Ok(sum / ensemble.len() as f64)
}

pub fn level_difference_mean(pair: &LevelPairEnsemble, f: &impl Observable) -> Result<f64> {
    if pair.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let sum: f64 = pair
        .fine()
        .iter()
        .zip(pair.coarse())
        .map(|(&x, &y)| f.eval(x) - f.eval(y))
        .sum();
    Ok(sum / pair.len() as f64)
}

/// Level-0 mean plus the mean fine-minus-coarse correction of every level.
pub fn mlmc_mean(h: &Hierarchy, f: &impl Observable) -> Result<f64> {
    let mut acc = mc_mean(h.level0(), f)?;
    for pair in h.pairs() {
        acc += level_difference_mean(pair, f)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStat {
    /// Sample mean of `f(X_0)` on level 0, of `f(X_l) - f(X_{l-1})` above.
    pub mean: f64,
    /// Unbiased sample variance of the same quantity.
    pub variance: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub levels: Vec<LevelStat>,
}

impl LevelStats {
    pub fn means(&self) -> Vec<f64> {
        self.levels.iter().map(|s| s.mean).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.levels.iter().map(|s| s.variance).collect()
    }

    pub fn finest(&self) -> Option<&LevelStat> {
        self.levels.last()
    }
}

fn mean_and_variance(values: impl Iterator<Item = f64> + Clone, level: usize) -> Result<LevelStat> {
    let n = values.clone().count();
    if n < 2 {
        return Err(Error::InsufficientSamples { level, count: n });
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    Ok(LevelStat {
        mean,
        variance: ss / (n - 1) as f64,
        samples: n,
    })
}

pub fn level_stats(h: &Hierarchy, f: &impl Observable) -> Result<LevelStats> {
    let mut levels = Vec::with_capacity(h.max_level() + 1);
    levels.push(mean_and_variance(
        h.level0().values().iter().map(|&x| f.eval(x)),
        0,
    )?);
    for (i, pair) in h.pairs().iter().enumerate() {
        let diffs = pair
            .fine()
            .iter()
            .zip(pair.coarse())
            .map(|(&x, &y)| f.eval(x) - f.eval(y));
        levels.push(mean_and_variance(diffs, i + 1)?);
    }
    Ok(LevelStats { levels })
}

/// Which form of the optimal-allocation formula to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSizeRule {
    /// `N_l = ceil(2 eps^-2 sqrt(V_l h_l) sum_n sqrt(V_n / h_n))`.
    #[default]
    Standard,
    /// `N_l = ceil(2 eps^-2 (V_l h_l) sum_n sqrt(V_n / h_n))`, without the square root
    /// on the per-level factor.
    Unrooted,
}

pub fn optimal_sample_sizes(
    stats: &LevelStats,
    grids: &[LevelGrid],
    epsilon: f64,
    rule: SampleSizeRule,
) -> Result<Vec<usize>> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::InvalidTolerance(epsilon));
    }
    if grids.len() < stats.levels.len() {
        return Err(Error::Structure(format!(
            "{} levels of statistics but only {} grids",
            stats.levels.len(),
            grids.len()
        )));
    }
    let sum: f64 = stats
        .levels
        .iter()
        .zip(grids)
        .map(|(s, g)| (s.variance / g.step).sqrt())
        .sum();
    let scale = 2.0 / (epsilon * epsilon) * sum;
    Ok(stats
        .levels
        .iter()
        .zip(grids)
        .map(|(s, g)| {
            let factor = match rule {
                SampleSizeRule::Standard => (s.variance * g.step).sqrt(),
                SampleSizeRule::Unrooted => s.variance * g.step,
            };
            (scale * factor).ceil() as usize
        })
        .collect())
}

/// True while the finest correction is still too large for the bias budget,
/// i.e. `|f_L| >= (M - 1) eps / sqrt(2)`.
pub fn needs_new_level(stats: &LevelStats, refinement: usize, epsilon: f64) -> bool {
    let Some(finest) = stats.finest() else {
        return true;
    };
    finest.mean.abs() >= (refinement as f64 - 1.0) * epsilon / std::f64::consts::SQRT_2
}

/// Cost of one sample of level `l` over a horizon: `T / h_0` on level 0 and
/// `T / h_l * (1 + 1/2)` for a fine/coarse couple.
pub fn unit_cost(grid: &LevelGrid, horizon: f64) -> f64 {
    let fine_steps = horizon / grid.step;
    if grid.level == 0 {
        fine_steps
    } else {
        fine_steps * 1.5
    }
}

/// `N_l = floor((2/3) C_max T^-1 h_l)`: equal spend per level when each couple
/// costs `T h_l^-1 (1 + 1/2)`.
pub fn fixed_budget_sizes(c_max: f64, horizon: f64, grids: &[LevelGrid]) -> Result<Vec<usize>> {
    if !c_max.is_finite() || c_max <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "budget must be positive, got {c_max}"
        )));
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    grids
        .iter()
        .map(|g| {
            // Exact for the power-of-two steps used in practice; the nudge only
            // absorbs rounding when the quotient should be an integer.
            let raw = (2.0 * c_max * g.step) / (3.0 * horizon);
            let n = (raw * (1.0 + 1e-12)).floor() as usize;
            if n == 0 {
                Err(Error::BudgetTooSmall { level: g.level })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// A model able to draw one sample of level 0 or one coupled couple of a
/// higher level, addressed by index so extension is reproducible.
pub trait LevelSampler: Sync {
    /// Level-0 sample (`grid.level == 0`).
    fn sample_single(&self, grid: &LevelGrid, index: u64) -> Result<f64>;
    /// `(fine, coarse)` couple (`grid.level >= 1`).
    fn sample_pair(&self, grid: &LevelGrid, index: u64) -> Result<(f64, f64)>;
    /// Simulated time per sample, for the cost model.
    fn horizon(&self) -> f64;
}

/// Terminal value of the OU model at `horizon`, started from `x0`.
#[derive(Debug, Clone, Copy)]
pub struct OuTerminalSampler {
    pub params: OuParams,
    pub x0: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl LevelSampler for OuTerminalSampler {
    fn sample_single(&self, grid: &LevelGrid, index: u64) -> Result<f64> {
        let key = StreamKey::path(self.seed, grid.level as u32, index);
        let path = propagate_single(
            self.x0,
            &self.params,
            grid,
            TimeSpan::new(0.0, self.horizon),
            key,
        )?;
        Ok(*path.last().expect("path holds the initial state"))
    }

    fn sample_pair(&self, grid: &LevelGrid, index: u64) -> Result<(f64, f64)> {
        let key = StreamKey::path(self.seed, grid.level as u32, index);
        let end = propagate_coupled_pair(
            self.x0,
            &self.params,
            grid,
            TimeSpan::new(0.0, self.horizon),
            key,
        )?
        .terminal();
        Ok((end.fine, end.coarse))
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub epsilon: f64,
    pub base_step: f64,
    pub refinement: usize,
    pub max_level: usize,
    /// Samples drawn on a level before its first variance estimate.
    pub pilot_samples: usize,
    pub rule: SampleSizeRule,
}

impl AdaptiveConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            base_step: 0.5,
            refinement: 2,
            max_level: 8,
            pilot_samples: 100,
            rule: SampleSizeRule::Standard,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidTolerance(self.epsilon));
        }
        if self.pilot_samples < 2 {
            return Err(Error::InvalidArgument(
                "pilot sample count must be at least 2".to_string(),
            ));
        }
        LevelGrid::new(self.base_step, self.refinement, 0).map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub hierarchy: Hierarchy,
    pub grids: Vec<LevelGrid>,
    pub stats: LevelStats,
    /// MLMC estimate of `E[f(X_L)]`.
    pub estimate: f64,
    pub total_cost: f64,
}

fn draw_level(
    sampler: &impl LevelSampler,
    grid: &LevelGrid,
    range: std::ops::Range<u64>,
) -> Result<Vec<(f64, f64)>> {
    range
        .into_par_iter()
        .map(|i| {
            if grid.level == 0 {
                sampler.sample_single(grid, i).map(|x| (x, 0.0))
            } else {
                sampler.sample_pair(grid, i)
            }
        })
        .collect()
}

/// Builds a hierarchy meeting `E[(estimate - E f)^2] < eps^2`: estimates
/// per-level variances, tops every level up to the optimal size, and adds
/// levels while the finest correction is too large.
pub fn run_adaptive(
    sampler: &impl LevelSampler,
    f: &impl Observable,
    config: &AdaptiveConfig,
) -> Result<AdaptiveRun> {
    config.validate()?;
    let mut grids = vec![LevelGrid::new(config.base_step, config.refinement, 0)?];
    // Observable values are taken when the hierarchy is assembled; the raw
    // model outputs are stored so extensions need no re-evaluation.
    let mut raw: Vec<Vec<(f64, f64)>> = vec![draw_level(
        sampler,
        &grids[0],
        0..config.pilot_samples as u64,
    )?];

    loop {
        let stats = loop {
            let hierarchy = assemble(&raw)?;
            let stats = level_stats(&hierarchy, f)?;
            let targets = optimal_sample_sizes(&stats, &grids, config.epsilon, config.rule)?;
            let mut grew = false;
            for (l, target) in targets.into_iter().enumerate() {
                let target = target.max(config.pilot_samples);
                let have = raw[l].len();
                if target > have {
                    let extra = draw_level(sampler, &grids[l], have as u64..target as u64)?;
                    raw[l].extend(extra);
                    grew = true;
                }
            }
            if !grew {
                break stats;
            }
        };

        if !needs_new_level(&stats, config.refinement, config.epsilon) {
            let hierarchy = assemble(&raw)?;
            let estimate = mlmc_mean(&hierarchy, f)?;
            let total_cost = grids
                .iter()
                .zip(hierarchy.sizes())
                .map(|(g, n)| n as f64 * unit_cost(g, sampler.horizon()))
                .sum();
            return Ok(AdaptiveRun {
                hierarchy,
                grids,
                stats,
                estimate,
                total_cost,
            });
        }
        let level = grids.len();
        if level > config.max_level {
            return Err(Error::ToleranceNotMet {
                epsilon: config.epsilon,
                max_level: config.max_level,
                finest_correction: stats.finest().map_or(f64::NAN, |s| s.mean),
                sizes: raw.iter().map(Vec::len).collect(),
            });
        }
        let grid = LevelGrid::new(config.base_step, config.refinement, level)?;
        raw.push(draw_level(sampler, &grid, 0..config.pilot_samples as u64)?);
        grids.push(grid);
    }
}

fn assemble(raw: &[Vec<(f64, f64)>]) -> Result<Hierarchy> {
    let level0 = Ensemble::new(raw[0].iter().map(|&(x, _)| x).collect());
    let pairs = raw[1..]
        .iter()
        .map(|couples| {
            let (fine, coarse) = couples.iter().copied().unzip();
            LevelPairEnsemble::new(fine, coarse)
        })
        .collect::<Result<Vec<_>>>()?;
    Hierarchy::new(level0, pairs)
}
