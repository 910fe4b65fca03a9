//! `run` and `bench` commands and their report files.
//!
//! Per run (`run`, and one subdirectory per scenario under `bench`):
//!
//! | file | contents |
//! |------|----------|
//! | `timeline.csv` | [`TIMELINE_HEADER_HEAD`], one `clearance_<label>` column per obstacle, then `yaw` |
//! | `events.csv` | [`EVENTS_HEADER`] |
//! | `metrics.json` | scenario name, seed and [`Metrics`]; deterministic |
//! | `timing.json` | wall-clock replan statistics |
//!
//! `bench` also writes `summary.csv` ([`SUMMARY_HEADER`], deterministic) and
//! `timing.csv` ([`TIMING_HEADER`]).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::chaser::ChaseError;
use crate::predictor::PredictError;
use crate::scenario::{load_scenario, ScenarioError};
use crate::simulator::{self, Metrics, Scenario, SimError, SimReport, TimingStats};

pub const TIMELINE_HEADER_HEAD: [&str; 7] = ["t", "chaser_x", "chaser_y", "chaser_z", "target_x", "target_y", "target_z"];
pub const EVENTS_HEADER: [&str; 4] = ["t", "kind", "cause", "detail"];
pub const SUMMARY_HEADER: [&str; 13] = [
    "name",
    "status",
    "safe_ratio",
    "visible_ratio",
    "accel_cost",
    "distance_tracking_ratio",
    "path_length_ratio",
    "min_safety_clearance",
    "min_visibility_clearance",
    "replans",
    "replan_failures",
    "fallbacks",
    "candidate_count",
];
pub const TIMING_HEADER: [&str; 5] = ["name", "replans", "mean_replan_ms", "median_replan_ms", "max_replan_ms"];

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_UNRECOVERED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("simulation failed: {0}")]
    Sim(SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("no scenario files (*.json) in {0}")]
    EmptySuite(PathBuf),
    #[error("run ended without a recoverable plan")]
    Unrecovered,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Sim(SimError::Predictor(PredictError::NoFeasiblePrediction))
            | Self::Sim(SimError::Chaser(ChaseError::NoFeasibleCandidate))
            | Self::Unrecovered => EXIT_UNRECOVERED,
            _ => EXIT_INPUT,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|source| CliError::Csv { path: path.to_path_buf(), source })
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let wrap = |source| CliError::Csv { path: path.to_path_buf(), source };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Header of `timeline.csv` for the given obstacle labels.
pub fn timeline_header(labels: &[&str]) -> Vec<String> {
    TIMELINE_HEADER_HEAD
        .iter()
        .map(|s| s.to_string())
        .chain(labels.iter().map(|l| format!("clearance_{l}")))
        .chain(std::iter::once("yaw".to_string()))
        .collect()
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    scenario: &'a str,
    seed: u64,
    #[serde(flatten)]
    metrics: &'a Metrics,
}

#[derive(Serialize)]
struct TimingFile<'a> {
    scenario: &'a str,
    #[serde(flatten)]
    timing: &'a TimingStats,
}

/// Writes the four per-run report files into `out`.
pub fn write_run_reports(out: &Path, scenario: &Scenario, seed: u64, report: &SimReport) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let labels: Vec<&str> = scenario.obstacles.iter().map(|o| o.label()).collect();
    write_csv(
        &out.join("timeline.csv"),
        &timeline_header(&labels),
        report.timeline.iter().map(|s| {
            let mut row = vec![s.t.to_string()];
            row.extend(s.chaser.iter().chain(s.target.iter()).map(f64::to_string));
            row.extend(s.clearance.iter().map(f64::to_string));
            row.push(s.yaw.to_string());
            row
        }),
    )?;
    write_csv(
        &out.join("events.csv"),
        &EVENTS_HEADER.map(String::from),
        report.events.iter().map(|e| {
            vec![
                e.t.to_string(),
                e.kind.as_str().to_string(),
                e.cause.map(|c| c.as_str()).unwrap_or_default().to_string(),
                e.detail.clone(),
            ]
        }),
    )?;
    write_json(&out.join("metrics.json"), &MetricsFile { scenario: &scenario.name, seed, metrics: &report.metrics })?;
    write_json(&out.join("timing.json"), &TimingFile { scenario: &scenario.name, timing: &report.timing })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Loads, simulates and reports one scenario.
pub fn run_scenario_file(path: &Path, out: &Path, seed: u64) -> Result<(Scenario, SimReport), CliError> {
    let (_, scenario) = load_scenario(path)?;
    let report = simulator::run(&scenario, seed).map_err(CliError::Sim)?;
    write_run_reports(out, &scenario, seed, &report)?;
    Ok((scenario, report))
}

/// `run <file> --out <dir> --seed <u64>`.
pub fn cmd_run(path: &Path, out: &Path, seed: u64) -> i32 {
    match run_scenario_file(path, out, seed) {
        Ok((_, report)) if report.unrecovered => {
            eprintln!("{}: {}", path.display(), CliError::Unrecovered);
            EXIT_UNRECOVERED
        }
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Scenario files of a suite, sorted by file name.
pub fn suite_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::EmptySuite(dir.to_path_buf()));
    }
    Ok(files)
}

/// Outcome of one suite entry.
pub struct BenchRow {
    pub name: String,
    pub result: Result<SimReport, CliError>,
}

impl BenchRow {
    fn summary(&self) -> Vec<String> {
        let mut row = vec![self.name.clone()];
        match &self.result {
            Ok(r) => {
                let m = &r.metrics;
                row.push(if r.unrecovered { "unrecovered" } else { "ok" }.into());
                row.extend([m.safe_ratio, m.visible_ratio, m.accel_cost, m.distance_tracking_ratio].map(|v| v.to_string()));
                row.extend([m.path_length_ratio, m.min_safety_clearance, m.min_visibility_clearance].map(opt));
                row.extend([m.replans, m.replan_failures, m.fallbacks, m.candidate_count].map(|v| v.to_string()));
            }
            Err(_) => {
                row.push("failed".into());
                row.resize(SUMMARY_HEADER.len(), String::new());
            }
        }
        row
    }

    fn timing(&self) -> Vec<String> {
        let mut row = vec![self.name.clone()];
        match &self.result {
            Ok(r) => {
                let t = &r.timing;
                row.push(t.replans.to_string());
                row.extend([t.mean_ms, t.median_ms, t.max_ms].map(|v| format!("{v:.3}")));
            }
            Err(_) => row.resize(TIMING_HEADER.len(), String::new()),
        }
        row
    }
}

/// Runs every scenario of a suite with the same seed, writing per-scenario
/// reports under `out/<file stem>/` and the `summary.csv` / `timing.csv`
/// tables. Failed scenarios produce a `failed` row and do not stop the suite.
pub fn run_suite(dir: &Path, out: &Path, seed: u64) -> Result<Vec<BenchRow>, CliError> {
    let files = suite_files(dir)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let rows = crate::par::par_map(&files, |path| {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string();
        let result = run_scenario_file(path, &out.join(&name), seed).map(|(_, r)| r);
        if let Err(e) = &result {
            log::warn!("{}: {e}", path.display());
        }
        BenchRow { name, result }
    });
    write_csv(&out.join("summary.csv"), &SUMMARY_HEADER.map(String::from), rows.iter().map(BenchRow::summary))?;
    write_csv(&out.join("timing.csv"), &TIMING_HEADER.map(String::from), rows.iter().map(BenchRow::timing))?;
    Ok(rows)
}

/// `bench <dir> --out <dir>`. Exit 1 when the suite is empty or any scenario
/// fails to load or run, 2 when a run ends unrecovered.
pub fn cmd_bench(dir: &Path, out: &Path, seed: u64) -> i32 {
    match run_suite(dir, out, seed) {
        Ok(rows) => {
            let mut code = EXIT_OK;
            for row in &rows {
                match &row.result {
                    Err(e) => {
                        eprintln!("{}: {e}", row.name);
                        code = code.max(e.exit_code());
                    }
                    Ok(r) if r.unrecovered => code = code.max(EXIT_UNRECOVERED),
                    Ok(_) => {}
                }
            }
            code
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
