//! PIT histograms and calibration diagnostics.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::forecast::ForecastEnsemble;
use crate::mlmc::Ensemble;

impl AsRef<[f64]> for ForecastEnsemble {
    fn as_ref(&self) -> &[f64] {
        self.values()
    }
}

impl AsRef<[f64]> for Ensemble {
    fn as_ref(&self) -> &[f64] {
        self.values()
    }
}

/// Fraction of members `<= x`.
pub fn empirical_cdf(members: &(impl AsRef<[f64]> + ?Sized), x: f64) -> Result<f64> {
    let values = members.as_ref();
    if values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let below = values.iter().filter(|&&v| v <= x).count();
    Ok(below as f64 / values.len() as f64)
}

/// Empirical PIT value of one observation: the forecast CDF at `y`, counting
/// ties as below.
pub fn pit_sample(members: &(impl AsRef<[f64]> + ?Sized), y: f64) -> Result<f64> {
    empirical_cdf(members, y)
}

/// Observation times and values, times strictly increasing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ObservationSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Structure(format!(
                "{} observation times but {} values",
                times.len(),
                values.len()
            )));
        }
        if let Some(k) = times
            .windows(2)
            .position(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
        {
            return Err(Error::Structure(format!(
                "observation times must increase strictly (index {})",
                k + 1
            )));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Bin of `r` among `bins` equal bins on `[0, 1]`: half-open
/// `[(i-1)/B, i/B)` with the last bin closed at 1. Zero-based.
#[inline]
pub fn bin_index(r: f64, bins: usize) -> usize {
    ((r * bins as f64).floor() as usize).min(bins - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitHistogram {
    counts: Vec<u64>,
    pit_values: Vec<f64>,
}

impl PitHistogram {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument(
                "histogram needs at least one bin".to_string(),
            ));
        }
        Ok(Self {
            counts: vec![0; bins],
            pit_values: Vec::new(),
        })
    }

    /// A histogram known only by its counts (raw PIT values unavailable).
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidArgument(
                "histogram needs at least one bin".to_string(),
            ));
        }
        Ok(Self {
            counts,
            pit_values: Vec::new(),
        })
    }

    pub fn add(&mut self, r: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain(r));
        }
        let bins = self.counts.len();
        self.counts[bin_index(r, bins)] += 1;
        self.pit_values.push(r);
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn pit_values(&self) -> &[f64] {
        &self.pit_values
    }

    /// `N_y`, the number of binned values.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let b = self.bins() as f64;
        (bin as f64 / b, (bin + 1) as f64 / b)
    }

    /// Counts normalised to a density on `[0, 1]`.
    pub fn density(&self) -> Vec<f64> {
        let total = self.total() as f64;
        let b = self.bins() as f64;
        self.counts.iter().map(|&c| c as f64 * b / total).collect()
    }
}

pub fn build_histogram(pit_values: &[f64], bins: usize) -> Result<PitHistogram> {
    let mut hist = PitHistogram::new(bins)?;
    for &r in pit_values {
        hist.add(r)?;
    }
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    Calibrated,
    Underdispersed,
    Overdispersed,
    Biased,
    /// Non-flat, but with no endpoint or skew signature.
    Indeterminate,
}

impl std::fmt::Display for Calibration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Calibration::Calibrated => "calibrated",
            Calibration::Underdispersed => "underdispersed",
            Calibration::Overdispersed => "overdispersed",
            Calibration::Biased => "biased",
            Calibration::Indeterminate => "indeterminate",
        };
        f.pad(s)
    }
}

/// Decision thresholds for [`diagnose`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationThresholds {
    /// Flat when every bin is within this fraction of `N_y / B`.
    pub max_relative_deviation: f64,
    /// Biased when `|skew|` reaches this.
    pub skew: f64,
    /// Underdispersed when the endpoint ratio reaches this.
    pub underdispersed_ratio: f64,
    /// Overdispersed when the endpoint ratio falls to this.
    pub overdispersed_ratio: f64,
}

impl Default for CalibrationThresholds {
    fn default() -> Self {
        Self {
            max_relative_deviation: 0.2,
            skew: 0.1,
            underdispersed_ratio: 2.0,
            overdispersed_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDiagnostics {
    /// `max_i |H_i - N_y/B| / (N_y/B)`.
    pub max_relative_deviation: f64,
    /// Mean of the two end bins over the mean of the interior bins. Infinite
    /// (serialised as `null`) when the interior is empty.
    #[serde(
        serialize_with = "finite_or_null",
        deserialize_with = "null_as_infinity"
    )]
    pub endpoint_ratio: f64,
    /// Mass in the lower half of `[0, 1]` minus mass in the upper half, as
    /// fractions of `N_y`. With an odd bin count the middle bin is excluded.
    pub skew: f64,
    pub classification: Calibration,
}

fn finite_or_null<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_some(x)
    } else {
        s.serialize_none()
    }
}

fn null_as_infinity<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Classifies a histogram. Checks run in order: skew (biased), then the
/// endpoint ratio (under-, then overdispersed), then flatness.
pub fn diagnose(
    hist: &PitHistogram,
    thresholds: &CalibrationThresholds,
) -> Result<CalibrationDiagnostics> {
    let total = hist.total();
    if total == 0 {
        return Err(Error::InvalidArgument("histogram is empty".to_string()));
    }
    let b = hist.bins();
    let counts: Vec<f64> = hist.counts().iter().map(|&c| c as f64).collect();
    let n = total as f64;
    let expected = n / b as f64;

    let max_relative_deviation = counts
        .iter()
        .map(|c| (c - expected).abs() / expected)
        .fold(0.0, f64::max);

    let endpoint_ratio = if b < 3 {
        1.0
    } else {
        let ends = (counts[0] + counts[b - 1]) / 2.0;
        let interior = counts[1..b - 1].iter().sum::<f64>() / (b - 2) as f64;
        if interior > 0.0 {
            ends / interior
        } else if ends > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    };

    let half = b / 2;
    let lower: f64 = counts[..half].iter().sum();
    let upper: f64 = counts[b - half..].iter().sum();
    let skew = (lower - upper) / n;

    let classification = if skew.abs() >= thresholds.skew {
        Calibration::Biased
    } else if endpoint_ratio >= thresholds.underdispersed_ratio {
        Calibration::Underdispersed
    } else if endpoint_ratio <= thresholds.overdispersed_ratio {
        Calibration::Overdispersed
    } else if max_relative_deviation < thresholds.max_relative_deviation {
        Calibration::Calibrated
    } else {
        Calibration::Indeterminate
    };

    Ok(CalibrationDiagnostics {
        max_relative_deviation,
        endpoint_ratio,
        skew,
        classification,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !variance.is_finite() || variance <= 0.0 || !mean.is_finite() {
            return Err(Error::InvalidParams(format!(
                "Gaussian needs finite mean and positive variance, got N({mean}, {variance})"
            )));
        }
        Ok(Self { mean, variance })
    }

    fn normal(&self) -> Normal {
        Normal::new(self.mean, self.variance.sqrt()).expect("validated on construction")
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.normal().cdf(x)
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.variance.sqrt();
        -0.5 * z * z - 0.5 * (std::f64::consts::TAU * self.variance).ln()
    }
}

/// Density of `R = F(Y)` on `[0, 1]`, sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDensity {
    pub r: Vec<f64>,
    pub density: Vec<f64>,
}

/// Exact PIT density when the forecast CDF `F` is `forecast` and the
/// observations follow `target`: `g(r) = p_target(x) / p_forecast(x)` with
/// `x = F^-1(r)`. Evaluated at the `n_grid` cell midpoints `(j + 1/2) / n_grid`,
/// since `g` may diverge at 0 and 1.
pub fn analytic_pit_reference(
    forecast: &Gaussian,
    target: &Gaussian,
    n_grid: usize,
) -> ReferenceDensity {
    let f = forecast.normal();
    let (r, density) = (0..n_grid)
        .map(|j| {
            let r = (j as f64 + 0.5) / n_grid as f64;
            let x = f.inverse_cdf(r);
            let g = (target.log_pdf(x) - forecast.log_pdf(x)).exp();
            (r, g)
        })
        .unzip();
    ReferenceDensity { r, density }
}

/// Exact probability of each of `bins` equal PIT bins:
/// `P(F^-1((i-1)/B) < Y <= F^-1(i/B))` for `Y ~ target`.
pub fn pit_bin_probabilities(forecast: &Gaussian, target: &Gaussian, bins: usize) -> Vec<f64> {
    let f = forecast.normal();
    let t = target.normal();
    let cum = |i: usize| -> f64 {
        if i == 0 {
            0.0
        } else if i == bins {
            1.0
        } else {
            t.cdf(f.inverse_cdf(i as f64 / bins as f64))
        }
    };
    (0..bins).map(|i| cum(i + 1) - cum(i)).collect()
}

/// L1 distance between the histogram's density and a bin-averaged reference
/// density, `sum_i |H_i / N_y - p_i|`. Lies in `[0, 2]`.
pub fn l1_distance(hist: &PitHistogram, bin_probabilities: &[f64]) -> Result<f64> {
    if bin_probabilities.len() != hist.bins() {
        return Err(Error::InvalidArgument(format!(
            "{} reference bins for a {}-bin histogram",
            bin_probabilities.len(),
            hist.bins()
        )));
    }
    let total = hist.total();
    if total == 0 {
        return Err(Error::InvalidArgument("histogram is empty".to_string()));
    }
    Ok(hist
        .counts()
        .iter()
        .zip(bin_probabilities)
        .map(|(&c, p)| (c as f64 / total as f64 - p).abs())
        .sum())
}
