use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{self, Observation};
use super::run::PitAccumulator;
use crate::error::{Error, Result};
use crate::verification::{diagnose, CalibrationDiagnostics, CalibrationThresholds, PitHistogram};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Seed of the run that produced the hierarchy.
    pub seed: u64,
    pub alpha: usize,
    pub bins: usize,
    /// `N_L + 1` when absent.
    pub finest_bins: Option<usize>,
    pub thresholds: CalibrationThresholds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub mlpit: PitHistogram,
    pub finest: PitHistogram,
    pub mlpit_diagnostics: CalibrationDiagnostics,
    pub finest_diagnostics: CalibrationDiagnostics,
}

/// Recomputes the PIT histograms from a stored hierarchy and observed
/// trajectory. Each snapshot is matched to the observation at the same time,
/// whose index `k` selects the uniform stream, so the MLPIT of the original
/// run is reproduced exactly.
pub fn verify_files(
    hierarchy: &Path,
    observations: &Path,
    opts: &VerifyOptions,
) -> Result<VerifyReport> {
    let obs = io::read_observations(observations)?;
    let snapshots = io::read_hierarchy(hierarchy)?;
    let mut acc: Option<PitAccumulator> = None;
    let mut cursor = obs.iter();
    for (time, h) in &snapshots {
        let o: &Observation = cursor.find(|o| o.time == *time).ok_or_else(|| {
            Error::Structure(format!(
                "{}: snapshot at t = {time} has no observation in {}",
                hierarchy.display(),
                observations.display()
            ))
        })?;
        let acc = match &mut acc {
            Some(a) => a,
            None => {
                let sizes = h.sizes();
                let finest_bins = opts.finest_bins.unwrap_or(sizes[sizes.len() - 1] + 1);
                acc.insert(PitAccumulator::new(
                    opts.seed,
                    opts.alpha,
                    opts.bins,
                    finest_bins,
                )?)
            }
        };
        acc.observe(o.k, h, o.value)?;
    }
    let acc = acc.ok_or_else(|| Error::EmptyInput(hierarchy.to_path_buf()))?;
    Ok(VerifyReport {
        mlpit_diagnostics: diagnose(&acc.mlpit, &opts.thresholds)?,
        finest_diagnostics: diagnose(&acc.finest, &opts.thresholds)?,
        mlpit: acc.mlpit,
        finest: acc.finest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub scenario: String,
    pub mlpit: CalibrationDiagnostics,
    pub finest: CalibrationDiagnostics,
}

/// Re-diagnoses stored histograms: every subdirectory of `dir` holding a
/// `mlpit.csv` and `pit_finest.csv` pair, or `dir` itself if it holds one.
pub fn report(dir: &Path, thresholds: &CalibrationThresholds) -> Result<Vec<ReportEntry>> {
    let mut dirs: Vec<PathBuf> = Vec::new();
    if dir.join("mlpit.csv").is_file() {
        dirs.push(dir.to_path_buf());
    } else {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.join("mlpit.csv").is_file() {
                dirs.push(path);
            }
        }
        dirs.sort();
    }
    if dirs.is_empty() {
        return Err(Error::EmptyInput(dir.join("mlpit.csv")));
    }
    dirs.iter()
        .map(|d| {
            Ok(ReportEntry {
                scenario: d.file_name().map_or_else(
                    || d.display().to_string(),
                    |n| n.to_string_lossy().into_owned(),
                ),
                mlpit: diagnose(&io::read_histogram(&d.join("mlpit.csv"))?, thresholds)?,
                finest: diagnose(&io::read_histogram(&d.join("pit_finest.csv"))?, thresholds)?,
            })
        })
        .collect()
}
