//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversarial::ScenarioKind;
use crate::losses::QuantileLevels;
use crate::metrics::{Comparator, ReportOptions};
use crate::runner_io::{self, BaseOrder, IoError, RunConfig, ScenarioParams};
use crate::trackers::{AdaptiveEta, LearningRate, SeriesPoint, VariantKind, VariantSpec};

/// Exit status for a failed command.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration.
    Usage(String),
    /// I/O or data problems.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<crate::error::Error> for CliError {
    fn from(e: crate::error::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "quantcal", version, about = "Online recalibration of multi-level quantile forecasts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recalibrate one series and write forecasts, a report and calibration-curve data.
    Run(RunArgs),
    /// Run one variant over a grid of step sizes.
    Sweep(SweepArgs),
    /// Generate a counterexample stream and compare variants on it.
    Adversarial(AdversarialArgs),
    /// Evaluate a file of issued forecasts.
    Metrics(MetricsArgs),
    /// Write a random test series (seeded by QUANTCAL_SEED).
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum VariantName {
    QtIndependent,
    Multiqt,
    MultiqtDelayed,
    ProjectedGd,
    PosthocSort,
    PosthocIsotonic,
    MultiqtSort,
    MultiqtEps,
}

impl VariantName {
    fn as_str(self) -> &'static str {
        match self {
            VariantName::QtIndependent => "qt_independent",
            VariantName::Multiqt => "multiqt",
            VariantName::MultiqtDelayed => "multiqt_delayed",
            VariantName::ProjectedGd => "projected_gd",
            VariantName::PosthocSort => "posthoc_sort",
            VariantName::PosthocIsotonic => "posthoc_isotonic",
            VariantName::MultiqtSort => "multiqt_sort",
            VariantName::MultiqtEps => "multiqt_eps",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RepairBase {
    Isotonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ComparatorArg {
    EmpiricalQuantile,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ScenarioArg {
    SortedQtCycle,
    PgdCycle,
    MultiqtSortDivergence,
    EpsSeparatedDivergence,
}

impl From<ScenarioArg> for ScenarioKind {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::SortedQtCycle => ScenarioKind::SortedQtCycle,
            ScenarioArg::PgdCycle => ScenarioKind::PgdCycle,
            ScenarioArg::MultiqtSortDivergence => ScenarioKind::MultiqtSortDivergence,
            ScenarioArg::EpsSeparatedDivergence => ScenarioKind::EpsSeparatedDivergence,
        }
    }
}

/// Options shared by `run` and `sweep`.
#[derive(Debug, Args)]
pub struct TrackerArgs {
    /// Input series CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "multiqt")]
    pub variant: VariantName,
    /// Feedback delay in steps (multiqt only).
    #[arg(long, default_value_t = 0)]
    pub delay: usize,
    /// Minimum gap for multiqt_eps.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Repair crossed base quantiles instead of rejecting them.
    #[arg(long, value_enum)]
    pub repair_base: Option<RepairBase>,
    /// Initial hidden offsets, comma-separated, one per level.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta1: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    pub pit_bins: usize,
    #[arg(long, value_enum, default_value = "empirical_quantile")]
    pub comparator: ComparatorArg,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub tracker: TrackerArgs,
    /// Fixed step size.
    #[arg(long, conflicts_with = "eta_heuristic", required_unless_present = "eta_heuristic")]
    pub eta: Option<f64>,
    /// Step size from the trailing-residual heuristic.
    #[arg(long)]
    pub eta_heuristic: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub tracker: TrackerArgs,
    /// Step sizes, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eta_grid: Vec<f64>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdversarialArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub q0: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Output directory for `series.csv` and `comparison.json`; the table is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Forecast CSV (`q_<level>` columns are the issued quantiles).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub pit_bins: usize,
    #[arg(long, value_enum, default_value = "empirical_quantile")]
    pub comparator: ComparatorArg,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Independent draws around a fixed centre.
    Iid,
    /// Centre jumps every `steps / 4` steps.
    Shift,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,0.9")]
    pub levels: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "iid")]
    pub kind: SynthKind,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn build_config(t: &TrackerArgs, learning_rate: LearningRate) -> Result<RunConfig, CliError> {
    let kind = VariantKind::from_parts(t.variant.as_str(), t.delay, t.eps).map_err(usage)?;
    if t.eps.is_some() && !matches!(kind, VariantKind::MultiQtEps { .. }) {
        return Err(CliError::Usage("--eps only applies to multiqt_eps".into()));
    }
    if t.pit_bins < 2 {
        return Err(CliError::Usage("--pit-bins must be at least 2".into()));
    }
    let spec = VariantSpec::new(kind, learning_rate).map_err(usage)?;
    Ok(RunConfig {
        spec,
        theta1: t.theta1.clone(),
        base_order: if t.repair_base.is_some() { BaseOrder::RepairIsotonic } else { BaseOrder::Require },
        options: ReportOptions { pit_bins: t.pit_bins, comparator: comparator(t.comparator) },
    })
}

fn comparator(c: ComparatorArg) -> Comparator {
    match c {
        ComparatorArg::EmpiricalQuantile => Comparator::EmpiricalQuantile,
        ComparatorArg::Zero => Comparator::Zero,
    }
}

fn write_out(out: Option<&Path>, content: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, content).map_err(|e| io_err(p, e)),
        None => std::io::stdout().write_all(content).map_err(|e| CliError::Runtime(e.to_string())),
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(buf)
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let lr = match a.eta {
        Some(eta) => LearningRate::fixed(eta),
        None => LearningRate::Adaptive(AdaptiveEta::default()),
    };
    let config = build_config(&a.tracker, lr)?;
    if let Some(t) = &config.theta1 {
        if config.spec.kind.requires_ordered_base() && crate::isotonic::first_crossing(t).is_some() {
            return Err(CliError::Usage("--theta1 must be non-decreasing for this variant".into()));
        }
    }
    let report = runner_io::run_to_dir(&config, &a.tracker.input, &a.out)?;
    let gaps = report.bounds.max_coverage_gap;
    println!("steps {} max coverage gap {gaps} written to {}", report.steps, a.out.display());
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    for &eta in &a.eta_grid {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(CliError::Usage(format!("grid step sizes must be finite and > 0, got {eta}")));
        }
    }
    let config = build_config(&a.tracker, LearningRate::fixed(a.eta_grid[0]))?;
    let file = runner_io::read_series(&a.tracker.input, config.base_order)?;
    let rows = runner_io::sweep(&config, &file.levels, &file.points, &a.eta_grid)?;
    let buf = csv_bytes(|b| runner_io::write_sweep(b, &rows))?;
    write_out(a.out.as_deref(), &buf)
}

fn cmd_adversarial(a: &AdversarialArgs) -> Result<(), CliError> {
    let params = ScenarioParams {
        eta: a.eta,
        alpha: a.alpha,
        beta: a.beta,
        q0: a.q0,
        eps: a.eps,
        repetitions: a.repetitions,
        horizon: a.horizon,
    };
    let (generated, report) = runner_io::compare_on_scenario(a.scenario.into(), &params).map_err(usage)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let times = runner_io::step_times(generated.len());
        let series = generated.to_series();
        let buf = csv_bytes(|b| runner_io::write_series(b, "t", &times, &generated.levels, &series))?;
        write_out(Some(&dir.join("series.csv")), &buf)?;
        write_out(Some(&dir.join("comparison.json")), runner_io::to_json(&report).as_bytes())?;
    }
    println!("scenario {} eta {} steps {} R {}", report.scenario, report.eta, report.steps, report.residual_bound);
    for row in &report.rows {
        let cov: Vec<String> = row.coverage.iter().map(|c| c.to_string()).collect();
        let bound = match (row.calibration_bound, row.within_bound) {
            (Some(b), Some(h)) => format!(" bound {b} within {h}"),
            _ => String::new(),
        };
        println!("{:<24} coverage {} gap {}{bound}", row.variant, cov.join("/"), row.max_coverage_gap);
    }
    Ok(())
}

fn cmd_metrics(a: &MetricsArgs) -> Result<(), CliError> {
    if a.pit_bins < 2 {
        return Err(CliError::Usage("--pit-bins must be at least 2".into()));
    }
    let options = ReportOptions { pit_bins: a.pit_bins, comparator: comparator(a.comparator) };
    let report = runner_io::evaluate_forecast_file(&a.input, &options)?;
    write_out(a.out.as_deref(), runner_io::to_json(&report).as_bytes())
}

/// Seed for `synth`, from `QUANTCAL_SEED` (default 0).
pub fn seed_from_env() -> Result<u64, CliError> {
    match std::env::var("QUANTCAL_SEED") {
        Ok(s) => s.trim().parse().map_err(|_| CliError::Usage(format!("QUANTCAL_SEED must be an integer, got `{s}`"))),
        Err(_) => Ok(0),
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A logistic outcome stream with a biased, too-narrow base forecaster.
pub fn synth_series(levels: &QuantileLevels, steps: usize, kind: SynthKind, seed: u64) -> Vec<SeriesPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = (steps / 4).max(1);
    (0..steps)
        .map(|t| {
            let centre = match kind {
                SynthKind::Iid => 0.0,
                SynthKind::Shift => [0.0, 3.0, -2.0, 1.0][(t / block).min(3)],
            };
            let u: f64 = rng.gen_range(1e-12..1.0 - 1e-12);
            let y = centre + logit(u);
            let base = levels.iter().map(|a| 0.5 + 0.6 * logit(a)).collect();
            SeriesPoint::new(base, y)
        })
        .collect()
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut lv = a.levels.clone();
    lv.sort_by(f64::total_cmp);
    let levels = QuantileLevels::new(lv).map_err(usage)?;
    if a.steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let seed = seed_from_env()?;
    let points = synth_series(&levels, a.steps, a.kind, seed);
    let times = runner_io::step_times(points.len());
    let buf = csv_bytes(|b| runner_io::write_series(b, "t", &times, &levels, &points))?;
    write_out(a.out.as_deref(), &buf)
}

/// Runs a parsed command.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Adversarial(a) => cmd_adversarial(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn variant_names_match_trackers() {
        for v in VariantName::value_variants() {
            assert!(VariantKind::NAMES.contains(&v.as_str()));
        }
    }

    #[test]
    fn synth_is_seeded() {
        let l = QuantileLevels::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(synth_series(&l, 20, SynthKind::Shift, 7), synth_series(&l, 20, SynthKind::Shift, 7));
        assert_ne!(synth_series(&l, 20, SynthKind::Iid, 7), synth_series(&l, 20, SynthKind::Iid, 8));
    }
}
