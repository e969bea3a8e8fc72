use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{ConvergenceOutput, ExperimentConfig, ResultRow, VerifyReport};
use crate::error::{Error, Result};

/// Version of the `results.csv` and `traces.csv` layouts, written as the
/// first column of every row.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub enum RunOutput {
    Results(Vec<ResultRow>),
    Convergence(ConvergenceOutput),
    Verify(VerifyReport),
}

impl RunOutput {
    pub fn rows(&self) -> &[ResultRow] {
        match self {
            RunOutput::Results(rows) => rows,
            RunOutput::Convergence(c) => &c.rows,
            RunOutput::Verify(_) => &[],
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Environment {
    package_version: &'static str,
    os: &'static str,
    arch: &'static str,
    threads: usize,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    schema_version: u32,
    experiment: String,
    config: &'a ExperimentConfig,
    environment: Environment,
    wall_time: f64,
    files: Vec<&'static str>,
}

/// Writes the files of one run into `out` (created if missing) and
/// returns their names.
///
/// Grid experiments write `results.csv`; convergence adds `traces.csv` and
/// `bracket.csv`; verify writes `sections.csv` and `report.json`. Every run
/// writes `run.json`.
pub fn write_outputs(
    out: &Path,
    config: &ExperimentConfig,
    output: &RunOutput,
    wall_time: f64,
) -> Result<Vec<&'static str>> {
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    match output {
        RunOutput::Results(rows) => {
            write_csv(&out.join("results.csv"), rows)?;
            files.push("results.csv");
        }
        RunOutput::Convergence(c) => {
            write_csv(&out.join("results.csv"), &c.rows)?;
            write_csv(&out.join("traces.csv"), &c.traces)?;
            write_csv(&out.join("bracket.csv"), &c.bracket)?;
            files.extend(["results.csv", "traces.csv", "bracket.csv"]);
        }
        RunOutput::Verify(report) => {
            write_csv(&out.join("sections.csv"), &report.sections)?;
            let json = serde_json::to_string_pretty(report).expect("report serializes");
            fs::write(out.join("report.json"), json)?;
            files.extend(["sections.csv", "report.json"]);
        }
    }
    files.push("run.json");
    let record = RunRecord {
        schema_version: SCHEMA_VERSION,
        experiment: config.experiment.to_string(),
        config,
        environment: Environment {
            package_version: env!("CARGO_PKG_VERSION"),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            threads: rayon::current_num_threads(),
        },
        wall_time,
        files: files.clone(),
    };
    let json = serde_json::to_string_pretty(&record).expect("run record serializes");
    fs::write(out.join("run.json"), json)?;
    Ok(files)
}
