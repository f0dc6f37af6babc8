//! CSV ingestion and emission, run configuration and batch drivers.
//!
//! Series files are wide: a time key column, a `y` column and one `q_<level>`
//! column per quantile level. Other columns are ignored on input, so corrected
//! forecast files (which add `cov_<level>` columns) read back as series.

use std::cmp::Ordering;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::adversarial::{self, GeneratedSeries, ScenarioKind};
use crate::error::Error;
use crate::isotonic::{first_crossing, pava_unchecked};
use crate::losses::{aggregated_unchecked, gradient_at_forecast, QuantileLevels};
use crate::metrics::{self, ReportOptions, RunReport};
use crate::trackers::{run_series_from, LearningRate, SeriesPoint, StepRecord, VariantKind, VariantSpec};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}: {source}")]
    Csv {
        source_name: String,
        #[source]
        source: csv::Error,
    },
    #[error("{source_name}: {message}")]
    Header { source_name: String, message: String },
    #[error("{source_name}: line {line}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { source_name: String, line: u64, column: String, value: String },
    #[error("{source_name}: line {line}, column `{column}`: missing value")]
    Missing { source_name: String, line: u64, column: String },
    #[error("{source_name}: line {line}, column `{column}`: value is not finite")]
    NonFinite { source_name: String, line: u64, column: String },
    #[error("{source_name}: line {line}: duplicate time `{time}`")]
    DuplicateTime { source_name: String, line: u64, time: String },
    #[error("{source_name}: line {line}: time `{time}` is out of order")]
    UnsortedTime { source_name: String, line: u64, time: String },
    #[error(
        "{source_name}: line {line}: base quantiles cross between `{lower}` and `{upper}` (use --repair-base=isotonic)"
    )]
    CrossedBase { source_name: String, line: u64, lower: String, upper: String },
    #[error("{source_name}: no data rows")]
    Empty { source_name: String },
    #[error(transparent)]
    Core(#[from] Error),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

/// What to do with base quantiles that cross.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaseOrder {
    /// Reject the file.
    #[default]
    Require,
    /// Replace each row by its isotonic regression.
    RepairIsotonic,
    /// Keep crossed rows as they are.
    Allow,
}

/// A parsed series file.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFile {
    pub time_column: String,
    pub times: Vec<String>,
    pub levels: QuantileLevels,
    pub points: Vec<SeriesPoint>,
    /// Rows whose base quantiles were repaired.
    pub repaired_rows: usize,
}

/// Column name for a level.
pub fn level_column(prefix: &str, level: f64) -> String {
    format!("{prefix}_{level}")
}

fn compare_times(a: &str, b: &str, numeric: bool) -> Ordering {
    if numeric {
        let (x, y): (f64, f64) = (a.parse().unwrap_or(f64::NAN), b.parse().unwrap_or(f64::NAN));
        x.total_cmp(&y)
    } else {
        a.cmp(b)
    }
}

/// Reads a series from `path`.
pub fn read_series(path: &Path, order: BaseOrder) -> IoResult<SeriesFile> {
    let file = fs::File::open(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
    parse_series(file, order, &path.display().to_string())
}

/// Parses a series from any reader. `source_name` prefixes error messages.
pub fn parse_series<R: Read>(reader: R, order: BaseOrder, source_name: &str) -> IoResult<SeriesFile> {
    let name = source_name.to_string();
    let csv_err = |source| IoError::Csv { source_name: name.clone(), source };
    let header_err = |message: String| IoError::Header { source_name: name.clone(), message };

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.len() < 3 {
        return Err(header_err("need a time column, `y` and at least one `q_<level>` column".into()));
    }
    let time_column = headers[0].to_string();
    let y_col = headers.iter().position(|h| h == "y").ok_or_else(|| header_err("missing `y` column".into()))?;
    let mut level_cols: Vec<(f64, usize)> = Vec::new();
    for (i, h) in headers.iter().enumerate().skip(1) {
        if let Some(rest) = h.strip_prefix("q_") {
            let level: f64 = rest.parse().map_err(|_| header_err(format!("cannot parse level in column `{h}`")))?;
            level_cols.push((level, i));
        }
    }
    if level_cols.is_empty() {
        return Err(header_err("no `q_<level>` columns".into()));
    }
    level_cols.sort_by(|a, b| a.0.total_cmp(&b.0));
    let levels = QuantileLevels::new(level_cols.iter().map(|c| c.0).collect())?;

    let mut times = Vec::new();
    let mut lines = Vec::new();
    let mut points = Vec::new();
    let mut repaired_rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = |col: usize| -> IoResult<f64> {
            let column = headers[col].to_string();
            let raw = rec.get(col).unwrap_or("");
            if raw.is_empty() {
                return Err(IoError::Missing { source_name: name.clone(), line, column });
            }
            let v: f64 = raw.parse().map_err(|_| IoError::Parse {
                source_name: name.clone(),
                line,
                column: column.clone(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(IoError::NonFinite { source_name: name.clone(), line, column });
            }
            Ok(v)
        };
        let time = rec.get(0).unwrap_or("").to_string();
        if time.is_empty() {
            return Err(IoError::Missing { source_name: name.clone(), line, column: time_column.clone() });
        }
        let y = cell(y_col)?;
        let mut base = level_cols.iter().map(|&(_, c)| cell(c)).collect::<IoResult<Vec<f64>>>()?;
        if let Some(i) = first_crossing(&base) {
            match order {
                BaseOrder::Require => {
                    return Err(IoError::CrossedBase {
                        source_name: name.clone(),
                        line,
                        lower: headers[level_cols[i].1].to_string(),
                        upper: headers[level_cols[i + 1].1].to_string(),
                    })
                }
                BaseOrder::RepairIsotonic => {
                    base = pava_unchecked(&base);
                    repaired_rows += 1;
                }
                BaseOrder::Allow => {}
            }
        }
        times.push(time);
        lines.push(line);
        points.push(SeriesPoint::new(base, y));
    }
    if points.is_empty() {
        return Err(IoError::Empty { source_name: name });
    }

    let numeric = times.iter().all(|t| t.parse::<f64>().is_ok_and(f64::is_finite));
    for i in 1..times.len() {
        match compare_times(&times[i - 1], &times[i], numeric) {
            Ordering::Less => {}
            Ordering::Equal => {
                return Err(IoError::DuplicateTime { source_name: name, line: lines[i], time: times[i].clone() })
            }
            Ordering::Greater => {
                return Err(IoError::UnsortedTime { source_name: name, line: lines[i], time: times[i].clone() })
            }
        }
    }
    Ok(SeriesFile { time_column, times, levels, points, repaired_rows })
}

fn fmt_f64(v: f64) -> String {
    // Display prints the shortest string that parses back to the same value.
    format!("{v}")
}

fn create(path: &Path) -> IoResult<fs::File> {
    fs::File::create(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// Writes issued forecasts in the wide layout plus `cov_<level>` indicator columns.
pub fn write_forecasts<W: Write>(
    w: W,
    time_column: &str,
    times: &[String],
    levels: &QuantileLevels,
    records: &[StepRecord],
) -> std::result::Result<(), csv::Error> {
    let mut wr = csv_writer(w);
    let mut header = vec![time_column.to_string(), "y".to_string()];
    header.extend(levels.iter().map(|a| level_column("q", a)));
    header.extend(levels.iter().map(|a| level_column("cov", a)));
    wr.write_record(&header)?;
    for (time, r) in times.iter().zip(records) {
        let mut row = vec![time.clone(), fmt_f64(r.y)];
        row.extend(r.forecast.iter().map(|&q| fmt_f64(q)));
        row.extend(r.covered.iter().map(|&c| if c { "1".to_string() } else { "0".to_string() }));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes a series (base quantiles and outcomes) in the input layout.
pub fn write_series<W: Write>(
    w: W,
    time_column: &str,
    times: &[String],
    levels: &QuantileLevels,
    points: &[SeriesPoint],
) -> std::result::Result<(), csv::Error> {
    let mut wr = csv_writer(w);
    let mut header = vec![time_column.to_string(), "y".to_string()];
    header.extend(levels.iter().map(|a| level_column("q", a)));
    wr.write_record(&header)?;
    for (time, p) in times.iter().zip(points) {
        let mut row = vec![time.clone(), fmt_f64(p.y)];
        row.extend(p.base.iter().map(|&q| fmt_f64(q)));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `(level, desired, actual)` rows for a calibration curve.
pub fn write_calibration<W: Write>(
    w: W,
    levels: &QuantileLevels,
    coverage: &[f64],
) -> std::result::Result<(), csv::Error> {
    let mut wr = csv_writer(w);
    wr.write_record(["level", "desired", "actual"])?;
    for (a, c) in levels.iter().zip(coverage) {
        wr.write_record([fmt_f64(a), fmt_f64(a), fmt_f64(*c)])?;
    }
    wr.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Everything needed to run one tracker over one series.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: VariantSpec,
    /// Initial hidden offsets; zero when absent.
    pub theta1: Option<Vec<f64>>,
    pub base_order: BaseOrder,
    pub options: ReportOptions,
}

impl RunConfig {
    pub fn new(spec: VariantSpec) -> Self {
        Self { spec, theta1: None, base_order: BaseOrder::Require, options: ReportOptions::default() }
    }

    fn initial(&self, levels: &QuantileLevels) -> crate::error::Result<Vec<f64>> {
        match &self.theta1 {
            Some(v) => {
                crate::error::check_len(levels.len(), v.len())?;
                Ok(v.clone())
            }
            None => Ok(vec![0.0; levels.len()]),
        }
    }
}

/// Runs the configured tracker and evaluates it.
pub fn execute_run(
    config: &RunConfig,
    levels: &QuantileLevels,
    series: &[SeriesPoint],
) -> crate::error::Result<(Vec<StepRecord>, RunReport)> {
    let initial = config.initial(levels)?;
    let records = run_series_from(&config.spec, levels, initial.clone(), series)?;
    let report = RunReport::build(&records, levels, Some(&config.spec), Some(&initial), &config.options)?;
    Ok((records, report))
}

/// Reads `input`, runs, and writes `forecasts.csv`, `report.json` and
/// `calibration.csv` into `out_dir`.
pub fn run_to_dir(config: &RunConfig, input: &Path, out_dir: &Path) -> IoResult<RunReport> {
    let file = read_series(input, config.base_order)?;
    let (records, report) = execute_run(config, &file.levels, &file.points)?;
    fs::create_dir_all(out_dir).map_err(|source| IoError::File { path: out_dir.to_path_buf(), source })?;
    let write_csv = |name: &str, f: &dyn Fn(fs::File) -> std::result::Result<(), csv::Error>| -> IoResult<()> {
        let path = out_dir.join(name);
        f(create(&path)?).map_err(|source| IoError::Csv { source_name: path.display().to_string(), source })
    };
    write_csv("forecasts.csv", &|f| write_forecasts(f, &file.time_column, &file.times, &file.levels, &records))?;
    write_csv("calibration.csv", &|f| write_calibration(f, &file.levels, &report.coverage))?;
    let path = out_dir.join("report.json");
    fs::write(&path, to_json(&report)).map_err(|source| IoError::File { path, source })?;
    Ok(report)
}

/// Step records for a file of already-issued forecasts, so the usual metrics apply.
/// The forecasts double as the base, with zero offsets.
pub fn records_from_forecasts(levels: &QuantileLevels, points: &[SeriesPoint]) -> Vec<StepRecord> {
    let a = levels.as_slice();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| StepRecord {
            t: i + 1,
            base: p.base.clone(),
            y: p.y,
            hidden: vec![0.0; a.len()],
            played: vec![0.0; a.len()],
            raw: p.base.clone(),
            forecast: p.base.clone(),
            covered: p.base.iter().map(|&q| p.y <= q).collect(),
            loss: aggregated_unchecked(a, &p.base, p.y),
            gradient: gradient_at_forecast(a, &p.base, p.y),
            eta: 0.0,
        })
        .collect()
}

/// Evaluates a corrected-forecast file without running a tracker.
pub fn evaluate_forecast_file(input: &Path, options: &ReportOptions) -> IoResult<RunReport> {
    let file = read_series(input, BaseOrder::Allow)?;
    let records = records_from_forecasts(&file.levels, &file.points);
    Ok(RunReport::build(&records, &file.levels, None, None, options)?)
}

/// One row of a learning-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eta: f64,
    pub calibration_error: f64,
    pub max_coverage_gap: f64,
    pub quantile_loss: f64,
    pub regret: Option<f64>,
    pub calibration_bound: Option<f64>,
    pub regret_bound: Option<f64>,
    /// `R * T^(-1/3)`, the rate that balances the calibration and regret terms.
    pub eta_ref: f64,
}

/// Runs `template` once per step size in `grid`.
pub fn sweep(
    template: &RunConfig,
    levels: &QuantileLevels,
    series: &[SeriesPoint],
    grid: &[f64],
) -> crate::error::Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty learning-rate grid"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &eta in grid {
        let mut config = template.clone();
        config.spec = VariantSpec::new(template.spec.kind, LearningRate::fixed(eta))?;
        let (records, report) = execute_run(&config, levels, series)?;
        let r = metrics::residual_bound(&records);
        rows.push(SweepRow {
            eta,
            calibration_error: report.calibration_error,
            max_coverage_gap: report.bounds.max_coverage_gap,
            quantile_loss: report.quantile_loss,
            regret: report.regret.as_ref().map(|g| g.value),
            calibration_bound: report.bounds.calibration_bound.map(|b| b.value),
            regret_bound: report.bounds.regret_bound.map(|b| b.value),
            eta_ref: r * (records.len() as f64).powf(-1.0 / 3.0),
        });
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> std::result::Result<(), csv::Error> {
    let mut wr = csv_writer(w);
    wr.write_record([
        "eta",
        "calibration_error",
        "max_coverage_gap",
        "quantile_loss",
        "regret",
        "calibration_bound",
        "regret_bound",
        "eta_ref",
    ])?;
    for r in rows {
        wr.write_record([
            fmt_f64(r.eta),
            fmt_f64(r.calibration_error),
            fmt_f64(r.max_coverage_gap),
            fmt_f64(r.quantile_loss),
            opt(r.regret),
            opt(r.calibration_bound),
            opt(r.regret_bound),
            fmt_f64(r.eta_ref),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Parameters for a named scenario. Unset fields take scenario defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScenarioParams {
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub q0: Option<f64>,
    pub eps: Option<f64>,
    pub repetitions: Option<usize>,
    pub horizon: Option<usize>,
}

/// Coverage of one variant on a scenario stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub variant: String,
    pub coverage: Vec<f64>,
    pub max_coverage_gap: f64,
    pub calibration_bound: Option<f64>,
    pub within_bound: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioKind,
    pub eta: f64,
    pub levels: QuantileLevels,
    pub steps: usize,
    pub residual_bound: f64,
    pub rows: Vec<ScenarioRow>,
}

/// Generates the scenario stream and the variants it is meant to compare.
pub fn generate_scenario(
    kind: ScenarioKind,
    p: &ScenarioParams,
) -> crate::error::Result<(GeneratedSeries, f64, Vec<VariantKind>)> {
    let eta = p.eta.unwrap_or(1.0);
    Ok(match kind {
        ScenarioKind::SortedQtCycle => (
            adversarial::gen_sorted_qt_cycle(eta, p.repetitions.unwrap_or(1000))?,
            eta,
            vec![
                VariantKind::QtIndependent,
                VariantKind::PosthocSort,
                VariantKind::PosthocIsotonic,
                VariantKind::MultiQt,
            ],
        ),
        ScenarioKind::PgdCycle => (
            adversarial::gen_pgd_cycle(
                p.alpha.unwrap_or(0.2),
                p.beta.unwrap_or(0.3),
                eta,
                p.q0.unwrap_or(0.0),
                p.repetitions.unwrap_or(5000),
            )?,
            eta,
            vec![VariantKind::ProjectedGd, VariantKind::MultiQt],
        ),
        ScenarioKind::MultiqtSortDivergence => (
            adversarial::gen_multiqt_sort_divergence(
                p.alpha.unwrap_or(0.3),
                p.beta.unwrap_or(0.7),
                eta,
                p.horizon.unwrap_or(10_000),
            )?,
            eta,
            vec![VariantKind::MultiQtSort, VariantKind::MultiQt],
        ),
        ScenarioKind::EpsSeparatedDivergence => {
            let eps = p.eps.unwrap_or(0.5);
            (
                adversarial::gen_eps_separated_divergence(
                    p.alpha.unwrap_or(0.3),
                    p.beta.unwrap_or(0.7),
                    eta,
                    eps,
                    p.horizon.unwrap_or(10_000),
                )?,
                eta,
                vec![VariantKind::MultiQtEps { eps }, VariantKind::MultiQt],
            )
        }
    })
}

/// Runs every comparison variant on the scenario stream.
pub fn compare_on_scenario(
    kind: ScenarioKind,
    p: &ScenarioParams,
) -> crate::error::Result<(GeneratedSeries, ScenarioReport)> {
    let (generated, eta, variants) = generate_scenario(kind, p)?;
    let series = generated.to_series();
    let mut rows = Vec::new();
    for v in variants {
        let mut config = RunConfig::new(VariantSpec::fixed(v, eta)?);
        config.theta1 = Some(generated.initial_offsets.clone());
        let (_, report) = execute_run(&config, &generated.levels, &series)?;
        let bound = report.bounds.calibration_bound;
        rows.push(ScenarioRow {
            variant: v.to_string(),
            coverage: report.coverage,
            max_coverage_gap: report.bounds.max_coverage_gap,
            calibration_bound: bound.map(|b| b.value),
            within_bound: bound.map(|b| b.holds),
        });
    }
    let report = ScenarioReport {
        scenario: kind,
        eta,
        levels: generated.levels.clone(),
        steps: generated.len(),
        residual_bound: generated.residual_bound,
        rows,
    };
    Ok((generated, report))
}

/// Step numbers `1..=n` as time keys.
pub fn step_times(n: usize) -> Vec<String> {
    (1..=n).map(|t| t.to_string()).collect()
}
