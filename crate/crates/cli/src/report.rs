//! JSON and CSV renderings of simulation and comparison reports.

use std::fs;
use std::path::Path;

use mtloop_core::store::{frame, Event, LOG_FILE};
use serde::Serialize;

use crate::compare::ComparisonReport;
use crate::sim::{SimError, SimulationReport};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("flat rows serialize to CSV");
    }
    w.into_inner().expect("writing to memory")
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("reports serialize");
    out.push(b'\n');
    out
}

/// Files making up a simulation report, by name.
pub fn simulation_files(report: &SimulationReport) -> Vec<(&'static str, Vec<u8>)> {
    vec![
        ("report.json", pretty(report)),
        ("learning_curve.csv", csv_bytes(&report.learning_curve)),
        ("fraction_auto.csv", csv_bytes(&report.fraction_auto)),
        ("topk.csv", csv_bytes(&report.topk)),
    ]
}

/// Writes the report files, plus the event log when `events` is given.
pub fn write_simulation(dir: &Path, report: &SimulationReport, events: Option<&[Event]>) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, bytes) in simulation_files(report) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    if let Some(events) = events {
        let path = dir.join(LOG_FILE);
        let bytes: Vec<u8> = events
            .iter()
            .flat_map(|e| frame(&serde_json::to_vec(e).expect("events serialize")))
            .collect();
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn comparison_files(report: &ComparisonReport) -> Vec<(&'static str, Vec<u8>)> {
    vec![
        ("comparison.json", pretty(report)),
        ("cells.csv", csv_bytes(&report.cell_rows())),
        ("summary.csv", csv_bytes(&report.summary)),
    ]
}

pub fn write_comparison(dir: &Path, report: &ComparisonReport) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, bytes) in comparison_files(report) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Best-model-prediction table as aligned text.
pub fn topk_table(report: &SimulationReport) -> String {
    let mut out = format!("{:<16}{:>8}{:>8}{:>6}\n", "Model", "Top-1", "Top-3", "n");
    for r in &report.topk {
        out.push_str(&format!(
            "{:<16}{:>7.0}%{:>7.0}%{:>6}\n",
            r.model,
            r.top1 * 100.0,
            r.top3 * 100.0,
            r.n
        ));
    }
    out
}
