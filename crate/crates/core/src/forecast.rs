//! Single-ensemble forecasts from a multilevel hierarchy by inverse transform
//! sampling.
//!
//! Each level is sorted once. A forecast member for a uniform draw `u` is the
//! level-0 order statistic at index `ceil(N_0 u)` plus, for every level
//! `l >= 1`, the difference of the fine and coarse order statistics both read
//! at the shared index `ceil(N_l u)`. The same `u` is used on every level.
//! Indices are 1-based; `u = 0` maps to the first order statistic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlmc::Hierarchy;
use crate::rng::{self, StreamKey};

/// Ascending order statistics of one ensemble. Ties keep their input order.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedLevel(Vec<f64>);

impl SortedLevel {
    pub fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        // `sort_by` is stable.
        sorted.sort_by(f64::total_cmp);
        Self(sorted)
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

    /// The `index`-th order statistic, 1-based.
    #[inline]
    pub fn order_statistic(&self, index: usize) -> f64 {
        self.0[index - 1]
    }
}

/// `ceil(n u)` clamped into `1..=n`.
#[inline]
pub fn quantile_index(n: usize, u: f64) -> usize {
    ((n as f64 * u).ceil() as usize).clamp(1, n)
}

fn check_unit(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(Error::Domain(u))
    }
}

/// Single-level empirical quantile `X^(ceil(N u))`.
pub fn empirical_quantile(sorted: &SortedLevel, u: f64) -> Result<f64> {
    check_unit(u)?;
    if sorted.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(sorted.order_statistic(quantile_index(sorted.len(), u)))
}

/// Every level of a hierarchy, sorted once.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedHierarchy {
    level0: SortedLevel,
    /// `(fine, coarse)` for levels `1..=L`, each side sorted independently.
    pairs: Vec<(SortedLevel, SortedLevel)>,
}

impl SortedHierarchy {
    pub fn new(h: &Hierarchy) -> Self {
        Self {
            level0: SortedLevel::from_values(h.level0().values()),
            pairs: h
                .pairs()
                .iter()
                .map(|p| {
                    (
                        SortedLevel::from_values(p.fine()),
                        SortedLevel::from_values(p.coarse()),
                    )
                })
                .collect(),
        }
    }

    pub fn level0(&self) -> &SortedLevel {
        &self.level0
    }

    pub fn pairs(&self) -> &[(SortedLevel, SortedLevel)] {
        &self.pairs
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.level0.len())
            .chain(self.pairs.iter().map(|(f, _)| f.len()))
            .collect()
    }

    /// Combined quantile with the per-level index supplied by `index_of(N_l)`.
    #[inline]
    fn combine(&self, index_of: impl Fn(usize) -> usize) -> f64 {
        let mut x = self.level0.order_statistic(index_of(self.level0.len()));
        for (fine, coarse) in &self.pairs {
            let i = index_of(fine.len());
            x += fine.order_statistic(i) - coarse.order_statistic(i);
        }
        x
    }
}

pub fn mlmc_quantile(h: &SortedHierarchy, u: f64) -> Result<f64> {
    check_unit(u)?;
    Ok(h.combine(|n| quantile_index(n, u)))
}

/// Where the uniforms driving the inverse transform come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UniformSource {
    /// i.i.d. `U[0,1)` draws from the keyed stream.
    Random(StreamKey),
    /// `u_i = i / N`, `i = 1..=N`; indices are computed in exact integer
    /// arithmetic.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastEnsemble {
    values: Vec<f64>,
    uniforms: Vec<f64>,
    /// `N_l` of the source hierarchy.
    level_sizes: Vec<usize>,
    alpha: usize,
}

impl ForecastEnsemble {
    /// Wraps raw member values with no provenance (e.g. a plain ensemble).
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            uniforms: Vec::new(),
            level_sizes: vec![n],
            alpha: 1,
            values,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn uniforms(&self) -> &[f64] {
        &self.uniforms
    }

    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of adjacent decreases when members are ordered by their `u`.
    /// Non-zero when negative level corrections locally invert the combined
    /// quantile function.
    pub fn inversions(&self) -> usize {
        let mut by_u: Vec<(f64, f64)> = self
            .uniforms
            .iter()
            .copied()
            .zip(self.values.iter().copied())
            .collect();
        by_u.sort_by(|a, b| a.0.total_cmp(&b.0));
        by_u.windows(2).filter(|w| w[1].1 < w[0].1).count()
    }
}

/// Draws `N = alpha * N_0` forecast members from the hierarchy.
pub fn generate_forecast(
    h: &Hierarchy,
    alpha: usize,
    source: UniformSource,
) -> Result<ForecastEnsemble> {
    generate_from_sorted(&SortedHierarchy::new(h), alpha, source)
}

pub fn generate_from_sorted(
    sorted: &SortedHierarchy,
    alpha: usize,
    source: UniformSource,
) -> Result<ForecastEnsemble> {
    if alpha == 0 {
        return Err(Error::InvalidArgument(
            "alpha must be at least 1".to_string(),
        ));
    }
    if sorted.level0.is_empty() {
        return Err(Error::Structure("level 0 ensemble is empty".to_string()));
    }
    let n = alpha * sorted.level0.len();
    let (values, uniforms) = match source {
        UniformSource::Random(key) => {
            let uniforms = rng::uniform(key, n);
            let values = uniforms
                .iter()
                .map(|&u| sorted.combine(|nl| quantile_index(nl, u)))
                .collect();
            (values, uniforms)
        }
        UniformSource::Stratified => {
            let values = (1..=n)
                .map(|i| sorted.combine(|nl| (nl * i).div_ceil(n).clamp(1, nl)))
                .collect();
            let uniforms = (1..=n).map(|i| i as f64 / n as f64).collect();
            (values, uniforms)
        }
    };
    Ok(ForecastEnsemble {
        values,
        uniforms,
        level_sizes: sorted.sizes(),
        alpha,
    })
}

pub fn forecast_mean(fe: &ForecastEnsemble) -> Result<f64> {
    if fe.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(fe.values.iter().sum::<f64>() / fe.len() as f64)
}
