use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use anyhow::Context;
use serde::Serialize;

use qhmc_gp::rng::{self, streams};
use qhmc_gp::{run_experiment, ExperimentReport};

use crate::config::{Resolved, RunConfig};
use crate::output::{self, ResultRow, ResultsWriter};
use crate::selftest::{self, CheckResult, Fault};
use crate::svg::LineChart;
use crate::CliError;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub quiet: bool,
}

impl Options {
    /// Reads the config (or the defaults) and applies flag overrides.
    pub fn load(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        Ok(config)
    }

    fn say(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

#[derive(Debug, Serialize)]
struct FailedCell {
    n_train: i64,
    snr_percent: f64,
    seed: u64,
    error: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    failed: Vec<FailedCell>,
}

fn write_manifest(dir: &Path, command: &str, config: &RunConfig, failed: Vec<FailedCell>) -> anyhow::Result<()> {
    let text = toml::to_string(&Manifest {
        command,
        config,
        failed,
    })
    .context("serializing manifest")?;
    output::write_atomic(&dir.join(output::MANIFEST_FILE), text.as_bytes())
}

fn prepare_out_dir(config: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = config.out_dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn summary(row: &ResultRow) -> String {
    format!(
        "{} n_train={} snr={}% seed={}: rel_error={:.4} mean_post_var={:.3e} constraints={} acceptance={:.2} time={:.1}s",
        row.function,
        row.n_train,
        row.snr_percent,
        row.seed,
        row.rel_error,
        row.mean_post_var,
        row.n_constraints,
        row.acceptance_rate,
        row.wall_time_s
    )
}

fn execute(resolved: &Resolved) -> anyhow::Result<ExperimentReport> {
    Ok(run_experiment(&resolved.spec, &resolved.experiment)?)
}

/// Runs one experiment and appends its row to the results file.
pub fn cmd_run(opts: &Options) -> Result<ResultRow, CliError> {
    let config = opts.load()?;
    let resolved = config.resolve()?;
    let dir = prepare_out_dir(&config)?;
    write_manifest(&dir, "run", &config, Vec::new())?;
    let report = execute(&resolved)?;
    let row = ResultRow::from_report(&report);
    ResultsWriter::open(&dir.join(output::RESULTS_FILE))?.append(&row)?;
    opts.say(&summary(&row));
    Ok(row)
}

/// Seed of sweep cell `index`.
pub fn cell_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(seed, streams::SWEEP + index as u64)
}

/// Runs every (n_train, snr) cell. Workers send finished rows to this thread,
/// which writes them in grid order.
pub fn cmd_sweep(opts: &Options) -> Result<Vec<ResultRow>, CliError> {
    let config = opts.load()?;
    let cells: Vec<(i64, f64, u64, Resolved)> = config
        .sweep_grid()?
        .into_iter()
        .enumerate()
        .map(|(i, (n, snr))| {
            let seed = cell_seed(config.seed, i);
            config.resolve_cell(n, snr, seed).map(|r| (n, snr, seed, r))
        })
        .collect::<Result<_, _>>()?;
    let dir = prepare_out_dir(&config)?;
    let mut writer = ResultsWriter::open(&dir.join(output::RESULTS_FILE))?;
    let jobs = opts
        .jobs
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, cells.len());

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<ResultRow, String>)>();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let mut write_error = None;
    thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let (next, cells) = (&next, &cells);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, _, _, resolved)) = cells.get(i) else {
                    break;
                };
                let result = execute(resolved)
                    .map(|r| ResultRow::from_report(&r))
                    .map_err(|e| format!("{e:#}"));
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut cursor = 0;
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&cursor) {
                let (n_train, snr_percent, seed, _) = &cells[cursor];
                match result {
                    Ok(row) => {
                        if write_error.is_none() {
                            write_error = writer.append(&row).err();
                        }
                        opts.say(&summary(&row));
                        rows.push(row);
                    }
                    Err(error) => {
                        eprintln!("cell n_train={n_train} snr={snr_percent}% failed: {error}");
                        failed.push(FailedCell {
                            n_train: *n_train,
                            snr_percent: *snr_percent,
                            seed: *seed,
                            error,
                        });
                    }
                }
                cursor += 1;
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e.into());
    }
    let n_failed = failed.len();
    write_manifest(&dir, "sweep", &config, failed)?;
    if n_failed > 0 {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "{n_failed} of {} sweep cells failed; see {}",
            cells.len(),
            dir.join(output::MANIFEST_FILE).display()
        )));
    }
    Ok(rows)
}

/// Runs one experiment and writes its adaptive trace as CSV and SVG. The
/// results row is appended as for `run`.
pub fn cmd_trace(opts: &Options) -> Result<ExperimentReport, CliError> {
    let config = opts.load()?;
    let resolved = config.resolve()?;
    let dir = prepare_out_dir(&config)?;
    write_manifest(&dir, "trace", &config, Vec::new())?;
    let report = execute(&resolved)?;
    output::write_trace_csv(&dir.join(output::TRACE_CSV), &report.trace)?;
    let points: Vec<(f64, f64)> = report
        .trace
        .records
        .iter()
        .map(|r| (r.n_constraints as f64, r.rel_error))
        .collect();
    let title = format!("{}: relative error while adding constraints", report.function);
    let chart = LineChart {
        title: &title,
        x_label: "number of constraints",
        y_label: "relative error",
        points: &points,
    };
    output::write_atomic(&dir.join(output::TRACE_SVG), chart.render().as_bytes())?;
    let row = ResultRow::from_report(&report);
    ResultsWriter::open(&dir.join(output::RESULTS_FILE))?.append(&row)?;
    opts.say(&summary(&row));
    Ok(report)
}

/// Runs the built-in checks and prints one line per check.
pub fn cmd_selftest(opts: &Options, fault: Option<Fault>) -> Result<Vec<CheckResult>, CliError> {
    let results = selftest::run_selftest(fault);
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        opts.say(&format!("{status} {}: {}", r.name, r.detail));
    }
    let failing: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failing.is_empty() {
        Ok(results)
    } else {
        Err(CliError::Runtime(anyhow::anyhow!("failing checks: {}", failing.join(", "))))
    }
}
