//! Experiment execution: run every configured cell, verify against the
//! oracle when asked, price traces, and write CSV/JSON reports.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use lanesim::buffers::Fill;
use lanesim::collectives::{FlatAlgorithm, LaneInner};
use lanesim::costmodel::{evaluate, rows_to_csv, SweepRow, CSV_HEADER};
use lanesim::runner::{execute, verify, Algorithm, RunError};
use lanesim::topology::TopologySpec;

use crate::config::ExperimentConfig;

#[derive(Debug)]
pub enum ExperimentError {
    Run { cell: String, error: RunError },
    Io { path: String, error: std::io::Error },
    /// Identical inputs produced different traces; a determinism bug.
    NonDeterministic { cell: String },
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Run { cell, error } => write!(f, "cell {cell}: {error}"),
            Self::Io { path, error } => write!(f, "{path}: {error}"),
            Self::NonDeterministic { cell } => {
                write!(f, "cell {cell}: repetitions produced different traces")
            }
        }
    }
}

impl std::error::Error for ExperimentError {}

/// One executed cell: the sweep row plus verification and determinism data.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    #[serde(flatten)]
    pub row: SweepRow,
    /// `None` when verification was not requested.
    pub verified: Option<bool>,
    pub trace_digest: String,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ExperimentReport {
    pub cells: Vec<CellReport>,
    pub failures: Vec<String>,
}

impl ExperimentReport {
    pub fn all_verified(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let rows: Vec<SweepRow> = self.cells.iter().map(|c| c.row.clone()).collect();
        rows_to_csv(&rows)
    }
}

fn cell_name(alg: Algorithm, nodes: usize, gpus: usize, ppg: usize, count: usize) -> String {
    format!("{alg}_n{nodes}g{gpus}p{ppg}c{count}")
}

/// Run the full cross product of the config's axes. Each cell is executed
/// `repetitions` times (traces must be byte-identical), optionally verified
/// against the oracle, and priced with the configured cost parameters.
/// Reports are written to `out` (CSV) and `out` with a `.json` extension;
/// with no `out`, the CSV goes to stdout. Traces go one file per cell under
/// `trace_out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let fill = Fill::new(config.fill, config.seed);
    let mut report = ExperimentReport::default();

    if let Some(dir) = &config.trace_out {
        fs::create_dir_all(dir)
            .map_err(|error| ExperimentError::Io { path: dir.display().to_string(), error })?;
    }

    for &algorithm in &config.resolved_algorithms() {
        for &nodes in &config.nodes {
            for &gpus in &config.gpus_per_node {
                for &ppg in &config.ppg {
                    for &count in &config.counts {
                        let cell = cell_name(algorithm, nodes, gpus, ppg, count);
                        let run_cell = || -> Result<_, RunError> {
                            let spec = TopologySpec::new(nodes, gpus, ppg)?;
                            let output = execute(&spec, algorithm, count, &fill)?;
                            Ok((spec, output))
                        };
                        let (spec, output) = run_cell()
                            .map_err(|error| ExperimentError::Run { cell: cell.clone(), error })?;
                        let digest = output.digest();
                        for _ in 1..config.repetitions {
                            let again = run_cell()
                                .map_err(|error| ExperimentError::Run { cell: cell.clone(), error })?
                                .1;
                            if again.digest() != digest {
                                return Err(ExperimentError::NonDeterministic { cell });
                            }
                        }

                        let verified = if config.verify {
                            match verify(&output) {
                                Ok(()) => Some(true),
                                Err(failure) => {
                                    report.failures.push(failure.to_string());
                                    Some(false)
                                }
                            }
                        } else {
                            None
                        };

                        let modeled = evaluate(&output.trace, &spec, &config.cost)
                            .map_err(|e| ExperimentError::Run {
                                cell: cell.clone(),
                                error: e.into(),
                            })?;

                        if let Some(dir) = &config.trace_out {
                            let path = dir.join(format!("{cell}.jsonl"));
                            fs::write(&path, output.trace.to_jsonl()).map_err(|error| {
                                ExperimentError::Io { path: path.display().to_string(), error }
                            })?;
                        }

                        report.cells.push(CellReport {
                            row: SweepRow {
                                algorithm: algorithm.selector().to_string(),
                                nodes,
                                gpus_per_node: gpus,
                                ppg,
                                count,
                                modeled,
                            },
                            verified,
                            trace_digest: digest,
                        });
                    }
                }
            }
        }
    }

    if let Some(out) = &config.out {
        write_reports(&report, out)?;
    }
    Ok(report)
}

fn write_reports(report: &ExperimentReport, out: &Path) -> Result<(), ExperimentError> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|error| ExperimentError::Io {
                path: parent.display().to_string(),
                error,
            })?;
        }
    }
    fs::write(out, report.to_csv())
        .map_err(|error| ExperimentError::Io { path: out.display().to_string(), error })?;
    let json_path = out.with_extension("json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json_path, json)
        .map_err(|error| ExperimentError::Io { path: json_path.display().to_string(), error })?;
    Ok(())
}

/// Axis filters for [`verify_suite`]; the default is the full built-in
/// matrix.
#[derive(Debug, Clone)]
pub struct MatrixFilter {
    pub nodes: Vec<usize>,
    pub gpus_per_node: Vec<usize>,
    pub ppg: Vec<usize>,
    pub counts: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
}

impl Default for MatrixFilter {
    fn default() -> Self {
        Self {
            nodes: vec![1, 2, 4, 8],
            gpus_per_node: vec![1, 2, 4],
            ppg: vec![1, 2, 4],
            counts: vec![1, 7, 64, 4096, 65536],
            algorithms: Algorithm::all().to_vec(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifySummary {
    /// (algorithm, verified cell count) pairs.
    pub per_algorithm: Vec<(String, usize)>,
    pub failures: Vec<String>,
    pub cells: usize,
    pub skipped: usize,
}

impl VerifySummary {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Whether an algorithm's power-of-two constraint rules out a topology;
/// such cells are skipped rather than failed.
fn pow2_invalid(alg: Algorithm, spec: &TopologySpec) -> bool {
    match alg {
        Algorithm::Flat(FlatAlgorithm::RecursiveDoubling) => {
            !spec.world_size().is_power_of_two()
        }
        Algorithm::PpgStandard(FlatAlgorithm::RecursiveDoubling) => {
            !spec.gpu_count().is_power_of_two()
        }
        Algorithm::Lane(LaneInner::RecursiveDoubling)
        | Algorithm::PpgLane(LaneInner::RecursiveDoubling) => !spec.nodes().is_power_of_two(),
        _ => false,
    }
}

/// The expected per-rank send count, where a closed form exists.
fn closed_form_sends(alg: Algorithm, spec: &TopologySpec) -> Option<usize> {
    let n = spec.world_size();
    let nodes = spec.nodes();
    match alg {
        Algorithm::Flat(FlatAlgorithm::Ring) | Algorithm::Flat(FlatAlgorithm::Rabenseifner) => {
            Some(2 * (n - 1))
        }
        Algorithm::Flat(FlatAlgorithm::RecursiveDoubling) => Some(n.ilog2() as usize),
        Algorithm::Lane(inner) => {
            let group = spec.processes_per_node();
            let inter = match inner {
                LaneInner::Ring => 2 * (nodes - 1),
                LaneInner::RecursiveDoubling => nodes.ilog2() as usize,
            };
            Some(2 * (group - 1) + inter)
        }
        _ => None,
    }
}

/// Run oracle-equivalence and closed-form message-count checks over the
/// matrix selected by `filter`.
pub fn verify_suite(filter: &MatrixFilter) -> Result<VerifySummary, ExperimentError> {
    let fill = Fill::new(lanesim::buffers::FillPattern::RandInt, filter.seed);
    let mut summary = VerifySummary::default();
    for &algorithm in &filter.algorithms {
        let mut passed = 0usize;
        for &nodes in &filter.nodes {
            for &gpus in &filter.gpus_per_node {
                for &ppg in &filter.ppg {
                    let spec = match TopologySpec::new(nodes, gpus, ppg) {
                        Ok(spec) => spec,
                        Err(error) => {
                            return Err(ExperimentError::Run {
                                cell: format!("n{nodes}g{gpus}p{ppg}"),
                                error: error.into(),
                            })
                        }
                    };
                    if pow2_invalid(algorithm, &spec) {
                        summary.skipped += filter.counts.len();
                        continue;
                    }
                    for &count in &filter.counts {
                        let cell = cell_name(algorithm, nodes, gpus, ppg, count);
                        summary.cells += 1;
                        let output = execute(&spec, algorithm, count, &fill)
                            .map_err(|error| ExperimentError::Run { cell: cell.clone(), error })?;
                        let mut ok = true;
                        if let Err(failure) = verify(&output) {
                            summary.failures.push(failure.to_string());
                            ok = false;
                        }
                        if let Some(want) = closed_form_sends(algorithm, &spec) {
                            let sends = output.trace.sends_per_rank();
                            if let Some((rank, &got)) =
                                sends.iter().enumerate().find(|(_, &s)| s != want)
                            {
                                summary.failures.push(format!(
                                    "{cell}: rank {rank} sent {got} messages, closed form says {want}"
                                ));
                                ok = false;
                            }
                        }
                        if ok {
                            passed += 1;
                        }
                    }
                }
            }
        }
        summary.per_algorithm.push((algorithm.selector().to_string(), passed));
    }
    Ok(summary)
}

/// Header used when echoing CSV to stdout.
pub fn csv_header() -> &'static str {
    CSV_HEADER
}
