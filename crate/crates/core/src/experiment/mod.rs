//! The Ornstein–Uhlenbeck calibration experiment: a forecast model run as an
//! MLMC hierarchy against a synthetic observed trajectory, with PIT
//! diagnostics written to disk.

mod config;
pub mod io;
mod run;
mod verify;

pub use config::{
    ExperimentConfig, ModelSpec, ScenarioConfig, ScenarioName, ScenarioSpec, DEFAULT_SEED,
    DESK_BUDGET, DESK_HORIZON, FULL_BUDGET, FULL_HORIZON, SERIES_THRESHOLDS,
};
pub use io::Observation;
pub use run::{
    finest_members, run_all, run_scenario, run_scenario_with, simulate_observations,
    HistogramSummary, Manifest, ManifestEntry, PitAccumulator, RunReport, ScenarioResult,
    ScenarioSummary, REFERENCE_GRID,
};
pub use verify::{report, verify_files, ReportEntry, VerifyOptions, VerifyReport};
