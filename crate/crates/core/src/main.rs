use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mlmc_forecast::experiment::io::{write_histogram, write_json};
use mlmc_forecast::experiment::{
    report, run_all, ExperimentConfig, ScenarioName, ScenarioSummary, VerifyOptions,
    SERIES_THRESHOLDS,
};
use mlmc_forecast::verification::CalibrationDiagnostics;
use mlmc_forecast::{Error, Result};

#[derive(Parser)]
#[command(
    version,
    about = "MLMC ensemble forecasts of an Ornstein-Uhlenbeck process with PIT calibration checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the calibration scenarios and write their artifacts.
    Run(RunArgs),
    /// Recompute PIT histograms from a stored hierarchy and observed trajectory.
    Verify(VerifyArgs),
    /// Re-diagnose stored PIT histograms.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Run only this scenario (calibrated, underdispersed, overdispersed, biased).
    #[arg(long)]
    scenario: Option<ScenarioName>,
    #[arg(long)]
    bins: Option<usize>,
    /// Forecast members per level-0 sample.
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Long run (T = 40000) instead of the desk-scale default (T = 4000).
    #[arg(long)]
    full: bool,
    /// Observation times to skip before binning.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Also write every member at every observation time.
    #[arg(long)]
    write_hierarchy: bool,
    /// Exit with status 4 if a scenario's MLPIT is not classified as expected.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    hierarchy: PathBuf,
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Write the recomputed histograms here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Config whose thresholds to apply; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// A run's output directory or one scenario directory.
    dir: PathBuf,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn describe(d: &CalibrationDiagnostics) -> String {
    let ratio = if d.endpoint_ratio.is_finite() {
        format!("{:.3}", d.endpoint_ratio)
    } else {
        "inf".to_string()
    };
    format!(
        "{:<14} max_dev={:.3} endpoint_ratio={ratio} skew={:+.3}",
        d.classification, d.max_relative_deviation, d.skew
    )
}

fn print_summary(s: &ScenarioSummary) {
    println!(
        "{:<14} expected={:<14} mlpit: {} l1={:.3} | finest: {} l1={:.3}",
        s.scenario,
        s.expected,
        describe(&s.mlpit.diagnostics),
        s.mlpit.l1_to_reference,
        describe(&s.finest.diagnostics),
        s.finest.l1_to_reference
    );
}

fn run(args: RunArgs) -> Result<bool> {
    let mut config = load(&args.common)?;
    if args.full {
        config = config.full_scale();
    }
    if let Some(name) = args.scenario {
        config.scenarios.retain(|s| s.name == name);
        if config.scenarios.is_empty() {
            return Err(Error::Config(format!(
                "scenario `{name}` is not configured"
            )));
        }
    }
    if let Some(bins) = args.bins {
        config.bins = bins;
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if let Some(burn_in) = args.burn_in {
        config.burn_in = burn_in;
    }
    config.write_hierarchy |= args.write_hierarchy;
    config.validate()?;

    let report = run_all(&config, &args.out_dir)?;
    for r in &report.results {
        print_summary(&r.summary);
    }
    println!(
        "wrote {} files under {}",
        report.manifest.files.len(),
        args.out_dir.display()
    );
    Ok(!args.check || report.results.iter().all(|r| r.summary.matches_expected()))
}

fn verify(args: VerifyArgs) -> Result<bool> {
    let config = load(&args.common)?;
    let opts = VerifyOptions {
        seed: config.seed,
        alpha: args.alpha.unwrap_or(config.alpha),
        bins: args.bins.unwrap_or(config.bins),
        finest_bins: config.finest_bins,
        thresholds: config.thresholds,
    };
    let report =
        mlmc_forecast::experiment::verify_files(&args.hierarchy, &args.observations, &opts)?;
    println!(
        "mlpit:  {} (N_y = {})",
        describe(&report.mlpit_diagnostics),
        report.mlpit.total()
    );
    println!("finest: {}", describe(&report.finest_diagnostics));
    if let Some(dir) = args.out_dir {
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        write_histogram(&dir.join("mlpit.csv"), &report.mlpit)?;
        write_histogram(&dir.join("pit_finest.csv"), &report.finest)?;
        write_json(
            &dir.join("diagnostics.json"),
            &serde_json::json!({
                "mlpit": report.mlpit_diagnostics,
                "finest": report.finest_diagnostics,
            }),
        )?;
    }
    Ok(true)
}

fn report_cmd(args: ReportArgs) -> Result<bool> {
    let thresholds = match &args.config {
        Some(path) => ExperimentConfig::load(path)?.thresholds,
        None => SERIES_THRESHOLDS,
    };
    for entry in report(&args.dir, &thresholds)? {
        println!(
            "{:<14} mlpit: {} | finest: {}",
            entry.scenario,
            describe(&entry.mlpit),
            describe(&entry.finest)
        );
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify(args) => verify(args),
        Command::Report(args) => report_cmd(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed: a scenario was not classified as expected");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
