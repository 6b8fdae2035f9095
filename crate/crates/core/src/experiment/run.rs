use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ScenarioConfig, ScenarioName};
use super::io::{self, HierarchyWriter, Observation};
use crate::error::{Error, Result};
use crate::forecast::{generate_forecast, UniformSource};
use crate::mlmc::{fixed_budget_sizes, Ensemble, Hierarchy, LevelPairEnsemble};
use crate::rng::{Purpose, Stream, StreamKey};
use crate::sde::{whole_steps, CoupledStepper, OuParams, PairState, SingleStepper};
use crate::verification::{
    analytic_pit_reference, diagnose, l1_distance, pit_bin_probabilities, pit_sample, Calibration,
    CalibrationDiagnostics, CalibrationThresholds, Gaussian, PitHistogram,
};

/// Grid points of the tabulated reference PIT density.
pub const REFERENCE_GRID: usize = 200;

/// Simulates the observed trajectory and returns it at `t_k`, `k = 1..=N_y`.
pub fn simulate_observations(cfg: &ScenarioConfig) -> Result<Vec<Observation>> {
    observations_for(&cfg.target, cfg)
}

fn observations_for(target: &OuParams, cfg: &ScenarioConfig) -> Result<Vec<Observation>> {
    let n_obs = cfg.observation_count()?;
    let stepper = SingleStepper::new(target, cfg.observation_step)?;
    let steps = whole_steps(cfg.observation_stride, cfg.observation_step)?;
    let mut stream = StreamKey::new(cfg.seed, 0, 0, Purpose::ObservationNoise).stream();
    let mut x = cfg.x0;
    Ok((1..=n_obs as u64)
        .map(|k| {
            stepper.advance(&mut x, &mut stream, steps);
            Observation {
                k,
                time: k as f64 * cfg.observation_stride,
                value: x,
            }
        })
        .collect())
}

/// Turns hierarchy snapshots into MLPIT and finest-ensemble PIT histograms.
/// The forecast at observation index `k` draws its uniforms from the stream
/// keyed `(seed, 0, k, QuantileUniform)`.
#[derive(Debug, Clone)]
pub struct PitAccumulator {
    seed: u64,
    alpha: usize,
    pub mlpit: PitHistogram,
    pub finest: PitHistogram,
    /// Sum over forecasts of [`ForecastEnsemble::inversions`](crate::forecast::ForecastEnsemble::inversions).
    pub inversions: u64,
}

impl PitAccumulator {
    pub fn new(seed: u64, alpha: usize, bins: usize, finest_bins: usize) -> Result<Self> {
        Ok(Self {
            seed,
            alpha,
            mlpit: PitHistogram::new(bins)?,
            finest: PitHistogram::new(finest_bins)?,
            inversions: 0,
        })
    }

    pub fn observe(&mut self, k: u64, h: &Hierarchy, y: f64) -> Result<()> {
        let key = StreamKey::new(self.seed, 0, k, Purpose::QuantileUniform);
        let fe = generate_forecast(h, self.alpha, UniformSource::Random(key))?;
        self.inversions += fe.inversions() as u64;
        self.mlpit.add(pit_sample(&fe, y)?)?;
        self.finest.add(pit_sample(finest_members(h), y)?)?;
        Ok(())
    }
}

/// Members of the finest level's fine ensemble (level 0 when `L = 0`).
pub fn finest_members(h: &Hierarchy) -> &[f64] {
    match h.pairs().last() {
        Some(p) => p.fine(),
        None => h.level0().values(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub bins: usize,
    pub total: u64,
    #[serde(flatten)]
    pub diagnostics: CalibrationDiagnostics,
    /// L1 distance to the exact bin probabilities of the stationary laws.
    pub l1_to_reference: f64,
}

impl HistogramSummary {
    fn new(
        hist: &PitHistogram,
        thresholds: &CalibrationThresholds,
        forecast: &Gaussian,
        target: &Gaussian,
    ) -> Result<Self> {
        Ok(Self {
            bins: hist.bins(),
            total: hist.total(),
            diagnostics: diagnose(hist, thresholds)?,
            l1_to_reference: l1_distance(
                hist,
                &pit_bin_probabilities(forecast, target, hist.bins()),
            )?,
        })
    }
}

/// Contents of `diagnostics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: ScenarioName,
    pub expected: Calibration,
    pub seed: u64,
    pub horizon: f64,
    pub burn_in: usize,
    /// `N_l` for `l = 0..=L`.
    pub level_sizes: Vec<usize>,
    pub forecast_members: usize,
    pub mlpit: HistogramSummary,
    pub finest: HistogramSummary,
    /// Mean number of local quantile inversions per forecast.
    pub mean_inversions: f64,
    pub forecast: OuParams,
    pub target: OuParams,
    pub thresholds: CalibrationThresholds,
}

impl ScenarioSummary {
    pub fn matches_expected(&self) -> bool {
        self.mlpit.diagnostics.classification == self.expected
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub summary: ScenarioSummary,
    pub mlpit: PitHistogram,
    pub finest: PitHistogram,
    pub observations: Vec<Observation>,
    /// Files written, when an output directory was given.
    pub files: Vec<PathBuf>,
}

struct Members {
    level0: Vec<(f64, Stream)>,
    pairs: Vec<Vec<(PairState, Stream)>>,
}

impl Members {
    fn new(seed: u64, x0: f64, sizes: &[usize]) -> Self {
        let level0 = (0..sizes[0] as u64)
            .map(|i| (x0, StreamKey::path(seed, 0, i).stream()))
            .collect();
        let pairs = sizes[1..]
            .iter()
            .enumerate()
            .map(|(l, &n)| {
                (0..n as u64)
                    .map(|i| {
                        (
                            PairState::at(x0),
                            StreamKey::path(seed, l as u32 + 1, i).stream(),
                        )
                    })
                    .collect()
            })
            .collect();
        Self { level0, pairs }
    }

    fn snapshot(&self) -> Result<Hierarchy> {
        let level0 = Ensemble::new(self.level0.iter().map(|m| m.0).collect());
        let pairs = self
            .pairs
            .iter()
            .map(|p| {
                LevelPairEnsemble::new(
                    p.iter().map(|m| m.0.fine).collect(),
                    p.iter().map(|m| m.0.coarse).collect(),
                )
            })
            .collect::<Result<_>>()?;
        Hierarchy::new(level0, pairs)
    }
}

/// Runs one scenario against a given observed trajectory. Every member is
/// propagated continuously across observation times. With `out_dir`, the
/// scenario's artifacts are written there.
pub fn run_scenario_with(
    cfg: &ScenarioConfig,
    observations: &[Observation],
    out_dir: Option<&Path>,
) -> Result<ScenarioResult> {
    cfg.validate()?;
    let n_obs = cfg.observation_count()?;
    if observations.len() != n_obs {
        return Err(Error::InvalidArgument(format!(
            "{} observations for {n_obs} observation times",
            observations.len()
        )));
    }
    let grids = cfg.grids()?;
    let sizes = fixed_budget_sizes(cfg.c_max, cfg.horizon, &grids)?;
    let finest_bins = cfg.finest_bins.unwrap_or(sizes[cfg.levels] + 1);

    let level0_stepper = SingleStepper::new(&cfg.forecast, grids[0].step)?;
    let level0_steps = whole_steps(cfg.observation_stride, grids[0].step)?;
    let pair_steppers = grids[1..]
        .iter()
        .map(|g| {
            Ok((
                CoupledStepper::new(&cfg.forecast, g)?,
                whole_steps(cfg.observation_stride, g.coarse_step())?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut hierarchy_writer = match out_dir {
        Some(dir) if cfg.write_hierarchy => {
            Some(HierarchyWriter::create(&dir.join("hierarchy.csv"))?)
        }
        _ => None,
    };

    let mut members = Members::new(cfg.seed, cfg.x0, &sizes);
    let mut acc = PitAccumulator::new(cfg.seed, cfg.alpha, cfg.bins, finest_bins)?;
    for obs in observations {
        members
            .level0
            .par_iter_mut()
            .for_each(|(x, s)| level0_stepper.advance(x, s, level0_steps));
        for (level, (stepper, steps)) in members.pairs.iter_mut().zip(&pair_steppers) {
            level
                .par_iter_mut()
                .for_each(|(p, s)| stepper.advance(p, s, *steps));
        }
        if obs.k as usize <= cfg.burn_in {
            continue;
        }
        let h = members.snapshot()?;
        acc.observe(obs.k, &h, obs.value)?;
        if let Some(w) = &mut hierarchy_writer {
            w.write_snapshot(obs.time, &h)?;
        }
    }

    let forecast_law = Gaussian::new(
        cfg.forecast.stationary_mean(),
        cfg.forecast.stationary_variance(),
    )?;
    let target_law = Gaussian::new(
        cfg.target.stationary_mean(),
        cfg.target.stationary_variance(),
    )?;
    let used = (n_obs - cfg.burn_in) as f64;
    let summary = ScenarioSummary {
        scenario: cfg.name,
        expected: cfg.name.expected(),
        seed: cfg.seed,
        horizon: cfg.horizon,
        burn_in: cfg.burn_in,
        forecast_members: cfg.alpha * sizes[0],
        level_sizes: sizes,
        mlpit: HistogramSummary::new(&acc.mlpit, &cfg.thresholds, &forecast_law, &target_law)?,
        finest: HistogramSummary::new(&acc.finest, &cfg.thresholds, &forecast_law, &target_law)?,
        mean_inversions: acc.inversions as f64 / used,
        forecast: cfg.forecast,
        target: cfg.target,
        thresholds: cfg.thresholds,
    };

    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        if let Some(w) = hierarchy_writer {
            w.finish()?;
            files.push(dir.join("hierarchy.csv"));
        }
        let path = dir.join("mlpit.csv");
        io::write_histogram(&path, &acc.mlpit)?;
        files.push(path);
        let path = dir.join("pit_finest.csv");
        io::write_histogram(&path, &acc.finest)?;
        files.push(path);
        let path = dir.join("observations.csv");
        io::write_observations(&path, observations)?;
        files.push(path);
        let path = dir.join("reference_density.csv");
        io::write_reference_density(
            &path,
            &analytic_pit_reference(&forecast_law, &target_law, REFERENCE_GRID),
        )?;
        files.push(path);
        let path = dir.join("diagnostics.json");
        io::write_json(&path, &summary)?;
        files.push(path);
    }

    Ok(ScenarioResult {
        summary,
        mlpit: acc.mlpit,
        finest: acc.finest,
        observations: observations.to_vec(),
        files,
    })
}

/// Runs one scenario with its own observed trajectory.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<ScenarioResult> {
    let observations = simulate_observations(cfg)?;
    run_scenario_with(cfg, &observations, out_dir)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub results: Vec<ScenarioResult>,
    pub manifest: Manifest,
}

/// Runs every configured scenario against one shared observed trajectory,
/// writing `<out_dir>/<scenario>/...`, the resolved `config.json`, a combined
/// `report.json` and a
/// `manifest.json` with SHA-256 digests. If a scenario fails, a `FAILED`
/// marker holding the error is left in its directory and the manifest still
/// covers everything written so far.
pub fn run_all(config: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    config.validate()?;
    let scenarios = config.all_scenarios()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_path = out_dir.join("config.json");
    io::write_json(&config_path, config)?;
    let mut files = vec![config_path];

    let observations = simulate_observations(&scenarios[0])?;
    let mut results = Vec::new();
    let mut failure = None;
    for cfg in &scenarios {
        let dir = out_dir.join(cfg.name.as_str());
        match run_scenario_with(cfg, &observations, Some(&dir)) {
            Ok(result) => {
                files.extend(result.files.iter().cloned());
                results.push(result);
            }
            Err(e) => {
                std::fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
                let marker = dir.join("FAILED");
                std::fs::write(&marker, format!("{e}\n")).map_err(|err| Error::io(&marker, err))?;
                files.push(marker);
                failure = Some(e);
                break;
            }
        }
    }

    let report_path = out_dir.join("report.json");
    let summaries: Vec<&ScenarioSummary> = results.iter().map(|r| &r.summary).collect();
    io::write_json(&report_path, &summaries)?;
    files.push(report_path);

    let manifest = write_manifest(config.seed, out_dir, &files)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(RunReport { results, manifest }),
    }
}

fn write_manifest(seed: u64, out_dir: &Path, files: &[PathBuf]) -> Result<Manifest> {
    let mut entries = files
        .iter()
        .map(|f| {
            let (sha256, bytes) = io::sha256_file(f)?;
            let rel = f.strip_prefix(out_dir).unwrap_or(f);
            let path = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            Ok(ManifestEntry {
                path,
                sha256,
                bytes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        seed,
        files: entries,
    };
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
