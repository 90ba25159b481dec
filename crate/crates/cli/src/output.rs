//! CSV result rows, trace tables and manifests.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use qhmc_gp::{AdaptiveTrace, ExperimentReport};

pub const RESULTS_FILE: &str = "results.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const TRACE_SVG: &str = "trace.svg";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// One completed experiment. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub function: String,
    pub dim: usize,
    pub n_train: usize,
    pub snr_percent: f64,
    pub method: String,
    pub n_constraints: usize,
    pub rel_error: f64,
    pub mean_post_var: f64,
    pub wall_time_s: f64,
    pub acceptance_rate: f64,
    pub seed: u64,
}

impl ResultRow {
    pub fn from_report(report: &ExperimentReport) -> Self {
        Self {
            experiment_id: format!(
                "{}-n{}-snr{}-s{}",
                report.function, report.n_train, report.snr_percent, report.seed
            ),
            function: report.function.name().to_string(),
            dim: report.function.dim(),
            n_train: report.n_train,
            snr_percent: report.snr_percent,
            method: report.method.clone(),
            n_constraints: report.n_constraints_final,
            rel_error: report.rel_error,
            mean_post_var: report.mean_posterior_variance,
            wall_time_s: report.wall_time_s,
            acceptance_rate: report.acceptance_rate,
            seed: report.seed,
        }
    }

    /// One CSV line, newline included.
    pub fn to_csv_line(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(self)?;
        w.into_inner().context("flushing CSV buffer")
    }
}

fn header_line() -> Vec<u8> {
    let names = [
        "experiment_id",
        "function",
        "dim",
        "n_train",
        "snr_percent",
        "method",
        "n_constraints",
        "rel_error",
        "mean_post_var",
        "wall_time_s",
        "acceptance_rate",
        "seed",
    ];
    let mut line = names.join(",").into_bytes();
    line.push(b'\n');
    line
}

/// Appends rows to a results file, writing the header when the file is new
/// or empty. Each row goes out in a single write.
pub struct ResultsWriter {
    file: fs::File,
}

impl ResultsWriter {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        if file.metadata()?.len() == 0 {
            file.write_all(&header_line())?;
            file.flush()?;
        }
        Ok(Self { file })
    }

    pub fn append(&mut self, row: &ResultRow) -> Result<()> {
        self.file.write_all(&row.to_csv_line()?)?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Serialize)]
struct TraceRow {
    step: usize,
    n_constraints: usize,
    rel_error: f64,
    mean_post_var: f64,
    /// Coordinates joined by ';', empty when nothing was added.
    location: String,
    rule: String,
    score: Option<f64>,
    mean_violations: usize,
    acceptance_rate: f64,
    epsilon: f64,
}

pub fn write_trace_csv(path: &Path, trace: &AdaptiveTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in &trace.records {
        w.serialize(TraceRow {
            step: r.step,
            n_constraints: r.n_constraints,
            rel_error: r.rel_error,
            mean_post_var: r.mean_post_var,
            location: r
                .location
                .as_ref()
                .map(|l| l.iter().map(f64::to_string).collect::<Vec<_>>().join(";"))
                .unwrap_or_default(),
            rule: r.selection.map(|s| s.rule.name().to_string()).unwrap_or_default(),
            score: r.selection.map(|s| s.score),
            mean_violations: r.mean_violations,
            acceptance_rate: r.acceptance_rate,
            epsilon: r.epsilon,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}
