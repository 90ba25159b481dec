//! Synthetic benchmarks, noise injection, the relative ℓ2 error and the
//! end-to-end experiment runner.

use std::f64::consts::{E, PI};
use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::adaptive::{adaptive_train, AdaptiveConfig, AdaptiveTrace, Strategy, TestSet, DEFAULT_GRID_SIZE};
use crate::constraints::{constrained_moments, violation_probability, ConstraintKind, ConstraintSet, Enforcement};
use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::points::Points;
use crate::rng::{self, SeedRng};
use crate::sampler::QhmcConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchFunction {
    /// arctan(5x₁) + arctan(x₂) on [0, 1]².
    Arctan2d,
    /// Ackley with a = 20, b = 0.2, c = 2π on [−10, 10]¹⁰.
    Ackley10d,
    /// arctan(5x₁) + arctan(2x₂) + x₃ + 2x₄² + 2/(1 + e^{−10(x₅ − ½)}) on [0, 1]⁵.
    Mono5d,
    /// Σᵢ arctan(5(1 − i/(d+1))xᵢ) on [0, 1]^d.
    ArctanSumNd { dim: usize },
}

pub const ARCTAN_SUM_DEFAULT_DIM: usize = 20;

impl BenchFunction {
    pub fn from_name(name: &str, dim: Option<usize>) -> Result<Self> {
        let f = match name {
            "arctan2d" => BenchFunction::Arctan2d,
            "ackley10d" => BenchFunction::Ackley10d,
            "mono5d" => BenchFunction::Mono5d,
            "arctan_sum_nd" => BenchFunction::ArctanSumNd {
                dim: dim.unwrap_or(ARCTAN_SUM_DEFAULT_DIM),
            },
            other => return Err(Error::InvalidConfig(format!("unknown function `{other}`"))),
        };
        if let Some(d) = dim {
            if d != f.dim() {
                return Err(Error::InvalidConfig(format!("{} requires dim = {}, got {d}", f.name(), f.dim())));
            }
        }
        if f.dim() == 0 {
            return Err(Error::InvalidConfig("dim must be at least 1".into()));
        }
        Ok(f)
    }

    pub fn name(&self) -> &'static str {
        match self {
            BenchFunction::Arctan2d => "arctan2d",
            BenchFunction::Ackley10d => "ackley10d",
            BenchFunction::Mono5d => "mono5d",
            BenchFunction::ArctanSumNd { .. } => "arctan_sum_nd",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BenchFunction::Arctan2d => 2,
            BenchFunction::Ackley10d => 10,
            BenchFunction::Mono5d => 5,
            BenchFunction::ArctanSumNd { dim } => *dim,
        }
    }

    pub fn domain(&self) -> Vec<(f64, f64)> {
        let unit = (0.0, 1.0);
        match self {
            BenchFunction::Ackley10d => vec![(-10.0, 10.0); 10],
            _ => vec![unit; self.dim()],
        }
    }

    /// The constraint the benchmark is studied with.
    pub fn default_constraint(&self) -> ConstraintKind {
        match self {
            BenchFunction::Arctan2d => ConstraintKind::LowerBound { bound: 0.0 },
            BenchFunction::Ackley10d => ConstraintKind::LowerBound { bound: 5.0 },
            BenchFunction::Mono5d | BenchFunction::ArctanSumNd { .. } => ConstraintKind::Monotone {
                dims: (0..self.dim()).collect(),
            },
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(match self {
            BenchFunction::Arctan2d => (5.0 * x[0]).atan() + x[1].atan(),
            BenchFunction::Ackley10d => ackley(x),
            BenchFunction::Mono5d => {
                (5.0 * x[0]).atan()
                    + (2.0 * x[1]).atan()
                    + x[2]
                    + 2.0 * x[3] * x[3]
                    + 2.0 / (1.0 + (-10.0 * (x[4] - 0.5)).exp())
            }
            BenchFunction::ArctanSumNd { dim } => {
                let d = *dim as f64;
                x.iter()
                    .enumerate()
                    .map(|(i, xi)| (5.0 * (1.0 - (i + 1) as f64 / (d + 1.0)) * xi).atan())
                    .sum()
            }
        })
    }
}

impl fmt::Display for BenchFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn ackley(x: &[f64]) -> f64 {
    const A: f64 = 20.0;
    const B: f64 = 0.2;
    const C: f64 = 2.0 * PI;
    let d = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let cos = x.iter().map(|v| (C * v).cos()).sum::<f64>() / d;
    let f = -A * (-B * sq.sqrt()).exp() - cos.exp() + A + E;
    // The two constants cancel only to rounding at the origin.
    if f.abs() < 1e-14 {
        0.0
    } else {
        f
    }
}

/// Evaluates `f` at every row.
pub fn target(f: BenchFunction, x: &Points) -> Result<Vec<f64>> {
    x.rows().map(|r| f.eval(r)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub function: BenchFunction,
    pub n_train: usize,
    pub n_test: usize,
    pub snr_percent: f64,
    pub constraint: ConstraintKind,
    pub seed: u64,
}

impl BenchmarkSpec {
    pub fn new(function: BenchFunction, n_train: usize, snr_percent: f64, seed: u64) -> Self {
        Self {
            function,
            n_train,
            n_test: 1000,
            snr_percent,
            constraint: function.default_constraint(),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.function.dim()
    }

    pub fn domain(&self) -> Vec<(f64, f64)> {
        self.function.domain()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train < 1 {
            return Err(Error::InvalidConfig("n_train must be at least 1".into()));
        }
        if self.n_test < 1 {
            return Err(Error::InvalidConfig("n_test must be at least 1".into()));
        }
        if !(self.snr_percent >= 0.0 && self.snr_percent.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "snr_percent must be non-negative, got {}",
                self.snr_percent
            )));
        }
        if let ConstraintKind::Monotone { dims } = &self.constraint {
            if let Some(&d) = dims.iter().find(|&&d| d >= self.dim()) {
                return Err(Error::IndexOutOfRange { index: d, dim: self.dim() });
            }
        }
        Ok(())
    }
}

fn uniform_points(n: usize, domain: &[(f64, f64)], rng: &mut SeedRng) -> Result<Points> {
    let mut data = Vec::with_capacity(n * domain.len());
    for _ in 0..n {
        for &(lo, hi) in domain {
            data.push(lo + (hi - lo) * rng.random::<f64>());
        }
    }
    Points::new(data, domain.len())
}

/// Training data plus a held-out test set. Training inputs, noise and test
/// inputs come from separate streams of `spec.seed`.
pub fn make_dataset(spec: &BenchmarkSpec) -> Result<(Dataset, TestSet)> {
    spec.validate()?;
    let domain = spec.domain();
    let mut rng = rng::split(spec.seed, rng::streams::DATASET);
    let x = uniform_points(spec.n_train, &domain, &mut rng)?;
    let clean = target(spec.function, &x)?;
    let y = add_noise(&clean, spec.snr_percent, &mut rng)?;
    let mut test_rng = rng::split(spec.seed, rng::streams::TEST_SET);
    let tx = uniform_points(spec.n_test, &domain, &mut test_rng)?;
    let truth = target(spec.function, &tx)?;
    Ok((Dataset::new(x, y)?, TestSet { x: tx, truth }))
}

/// y + ε with ε ~ N(0, σ²), σ = (snr_percent/100)·std(y), std taken over the
/// population.
pub fn add_noise(y: &[f64], snr_percent: f64, rng: &mut SeedRng) -> Result<Vec<f64>> {
    if !(snr_percent >= 0.0 && snr_percent.is_finite()) {
        return Err(Error::InvalidConfig(format!("snr_percent must be non-negative, got {snr_percent}")));
    }
    if snr_percent == 0.0 {
        return Ok(y.to_vec());
    }
    if y.is_empty() {
        return Err(Error::Empty("signal"));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std == 0.0 {
        return Err(Error::InvalidData("noise scale is undefined for a constant signal".into()));
    }
    let scale = snr_percent / 100.0 * std;
    Ok(y.iter()
        .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// E = √(Σ(pred − true)² / Σ true²).
pub fn relative_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("truth"));
    }
    let den: f64 = truth.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(Error::InvalidData("relative error is undefined for an all-zero truth".into()));
    }
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((num / den).sqrt())
}

/// Everything needed to run one experiment besides the benchmark itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: String,
    pub qhmc: QhmcConfig,
    pub mode: Enforcement,
    pub eta: f64,
    pub penalty_weight: f64,
    pub strategy: Strategy,
    pub max_constraints: usize,
    pub n_candidates: usize,
    pub variance_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: "qhmc-both".into(),
            qhmc: QhmcConfig::default(),
            mode: Enforcement::Hard,
            eta: crate::constraints::DEFAULT_ETA,
            penalty_weight: crate::constraints::DEFAULT_PENALTY_WEIGHT,
            strategy: Strategy::Combined,
            max_constraints: 20,
            n_candidates: DEFAULT_GRID_SIZE,
            variance_threshold: crate::adaptive::DEFAULT_VARIANCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub function: BenchFunction,
    pub method: String,
    pub n_train: usize,
    pub snr_percent: f64,
    pub seed: u64,
    pub rel_error: f64,
    /// Error of the posterior mean averaged over the final chain.
    pub chain_rel_error: f64,
    pub mean_posterior_variance: f64,
    pub wall_time_s: f64,
    pub acceptance_rate: f64,
    pub n_constraints_final: usize,
    pub trace: AdaptiveTrace,
    /// Margins of the final constraint set under the final model.
    pub constraint_margins: Vec<f64>,
    /// Φ((b − y*)/s) for each entry of `constraint_margins`.
    pub violation_probabilities: Vec<f64>,
}

/// Builds the dataset, runs the adaptive loop and scores the final model on
/// the test set. Only `wall_time_s` depends on anything but the inputs.
pub fn run_experiment(spec: &BenchmarkSpec, config: &ExperimentConfig) -> Result<ExperimentReport> {
    let label = format!(
        "{} n_train={} snr={} seed={} method={}",
        spec.function, spec.n_train, spec.snr_percent, spec.seed, config.method
    );
    let wrap = |e: Error| Error::Experiment {
        label: label.clone(),
        source: Box::new(e),
    };
    let start = Instant::now();
    let (data, test) = make_dataset(spec).map_err(wrap)?;
    let mut template = ConstraintSet::new(spec.dim(), spec.constraint.clone(), config.mode);
    template.eta = config.eta;
    template.penalty_weight = config.penalty_weight;
    let mut adaptive = AdaptiveConfig::with_lhs(
        config.strategy,
        config.max_constraints,
        &spec.domain(),
        config.n_candidates,
        spec.seed,
    )
    .map_err(wrap)?;
    adaptive.variance_threshold = config.variance_threshold;
    let qhmc = QhmcConfig {
        seed: rng::derive_seed(spec.seed ^ config.qhmc.seed, rng::streams::CHAIN),
        ..config.qhmc.clone()
    };
    let outcome = adaptive_train(&data, &qhmc, &template, &adaptive, &test).map_err(wrap)?;

    let post = outcome.model.posterior(&test.x).map_err(wrap)?;
    let rel_error = relative_error(&post.mean, &test.truth).map_err(wrap)?;
    let moments = constrained_moments(&outcome.model, &outcome.constraints.points, &outcome.constraints.kind)
        .map_err(wrap)?;
    let constraint_margins = moments.margins(outcome.constraints.beta());
    let violation_probabilities = moments
        .mean
        .iter()
        .zip(&moments.std)
        .map(|(m, s)| violation_probability(*m, *s, moments.bound))
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;
    let wall_time_s = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);

    Ok(ExperimentReport {
        function: spec.function,
        method: config.method.clone(),
        n_train: spec.n_train,
        snr_percent: spec.snr_percent,
        seed: spec.seed,
        rel_error,
        chain_rel_error: outcome.trace.chain_rel_error,
        mean_posterior_variance: post.mean_variance(),
        wall_time_s,
        acceptance_rate: outcome.chain.acceptance_rate,
        n_constraints_final: outcome.constraints.len(),
        constraint_margins,
        violation_probabilities,
        trace: outcome.trace,
    })
}
