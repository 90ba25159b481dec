//! TOML run configuration.
//!
//! Every key is optional. An empty file runs the arctan2d reference
//! experiment. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qhmc_gp::adaptive::{DEFAULT_GRID_SIZE, DEFAULT_VARIANCE_THRESHOLD};
use qhmc_gp::constraints::{DEFAULT_ETA, DEFAULT_PENALTY_WEIGHT};
use qhmc_gp::{
    BenchFunction, BenchmarkSpec, ConstraintKind, Enforcement, ExperimentConfig, QhmcConfig, Strategy,
};

/// A configuration problem, reported with exit status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("invalid `{field}`: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Free-form label written to the `method` column.
    pub method: String,
    pub out_dir: PathBuf,
    pub benchmark: BenchmarkSection,
    pub sampler: SamplerSection,
    pub constraints: ConstraintSection,
    pub adaptive: AdaptiveSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: "qhmc-both".into(),
            out_dir: PathBuf::from("out"),
            benchmark: BenchmarkSection::default(),
            sampler: SamplerSection::default(),
            constraints: ConstraintSection::default(),
            adaptive: AdaptiveSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    /// arctan2d, ackley10d, mono5d or arctan_sum_nd.
    pub function: String,
    /// Input dimension; only arctan_sum_nd accepts a value other than its
    /// fixed one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<i64>,
    pub n_train: i64,
    pub n_test: i64,
    pub snr_percent: f64,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            function: "arctan2d".into(),
            dim: None,
            n_train: 20,
            n_test: 1000,
            snr_percent: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Qhmc,
    /// Fixed mass e^mu_m; sigma_m is ignored.
    Hmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    pub epsilon: f64,
    pub steps: i64,
    pub mu_m: f64,
    pub sigma_m: f64,
    pub n_samples: i64,
    pub burn_in: i64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let q = QhmcConfig::default();
        Self {
            kind: SamplerKind::Qhmc,
            epsilon: q.epsilon,
            steps: q.steps as i64,
            mu_m: q.mu_m,
            sigma_m: q.sigma_m,
            n_samples: q.n_samples as i64,
            burn_in: q.burn_in as i64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    /// The benchmark's own constraint.
    Default,
    LowerBound,
    Monotone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintSection {
    pub mode: ModeName,
    pub kind: KindName,
    /// Lower bound for `lower_bound`; defaults to the benchmark's bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    /// Active dimensions for `monotone`; defaults to all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<i64>>,
    pub eta: f64,
    pub penalty_weight: f64,
}

impl Default for ConstraintSection {
    fn default() -> Self {
        Self {
            mode: ModeName::Hard,
            kind: KindName::Default,
            bound: None,
            dims: None,
            eta: DEFAULT_ETA,
            penalty_weight: DEFAULT_PENALTY_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveSection {
    /// constraint_adaptive, variance_adaptive or combined.
    pub strategy: String,
    pub max_constraints: i64,
    pub n_candidates: i64,
    pub variance_threshold: f64,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        Self {
            strategy: Strategy::Combined.name().into(),
            max_constraints: 20,
            n_candidates: DEFAULT_GRID_SIZE as i64,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n_train: Vec<i64>,
    pub snr_percent: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_train: vec![20, 50, 100, 200],
            snr_percent: vec![0.0, 5.0, 10.0, 15.0, 20.0],
        }
    }
}

/// A validated experiment, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub spec: BenchmarkSpec,
    pub experiment: ExperimentConfig,
}

fn count(field: &str, v: i64, min: i64) -> Result<usize, ConfigError> {
    if v < min {
        return Err(invalid(field, format!("must be at least {min}, got {v}")));
    }
    Ok(v as usize)
}

fn finite(field: &str, v: f64) -> Result<f64, ConfigError> {
    if !v.is_finite() {
        return Err(invalid(field, format!("must be finite, got {v}")));
    }
    Ok(v)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("malformed config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validates everything and builds the experiment for the top-level
    /// benchmark settings.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let b = &self.benchmark;
        self.resolve_cell(b.n_train, b.snr_percent, self.seed)
    }

    /// As [`resolve`](Self::resolve) with the grid coordinates and seed of
    /// one sweep cell substituted.
    pub fn resolve_cell(&self, n_train: i64, snr_percent: f64, seed: u64) -> Result<Resolved, ConfigError> {
        let b = &self.benchmark;
        let dim = b.dim.map(|d| count("benchmark.dim", d, 1)).transpose()?;
        let function = BenchFunction::from_name(&b.function, dim).map_err(|e| invalid("benchmark.function", e))?;
        let n_train = count("benchmark.n_train", n_train, 1)?;
        let n_test = count("benchmark.n_test", b.n_test, 1)?;
        let snr = finite("benchmark.snr_percent", snr_percent)?;
        if snr < 0.0 {
            return Err(invalid("benchmark.snr_percent", format!("must be non-negative, got {snr}")));
        }

        let c = &self.constraints;
        let constraint = match c.kind {
            KindName::Default => {
                let mut k = function.default_constraint();
                if let (ConstraintKind::LowerBound { bound }, Some(b)) = (&mut k, c.bound) {
                    *bound = finite("constraints.bound", b)?;
                }
                k
            }
            KindName::LowerBound => {
                let bound = match c.bound {
                    Some(b) => finite("constraints.bound", b)?,
                    None => match function.default_constraint() {
                        ConstraintKind::LowerBound { bound } => bound,
                        ConstraintKind::Monotone { .. } => 0.0,
                    },
                };
                ConstraintKind::LowerBound { bound }
            }
            KindName::Monotone => {
                let dims = match &c.dims {
                    Some(d) if d.is_empty() => return Err(invalid("constraints.dims", "must not be empty")),
                    Some(d) => d
                        .iter()
                        .map(|&i| {
                            if i < 0 || i as usize >= function.dim() {
                                Err(invalid(
                                    "constraints.dims",
                                    format!("dimension {i} outside 0..{}", function.dim()),
                                ))
                            } else {
                                Ok(i as usize)
                            }
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                    None => (0..function.dim()).collect(),
                };
                ConstraintKind::Monotone { dims }
            }
        };
        if c.kind != KindName::Monotone && c.dims.is_some() {
            return Err(invalid("constraints.dims", "only applies to kind = \"monotone\""));
        }
        if !(c.eta > 0.0 && c.eta < 0.5) {
            return Err(invalid("constraints.eta", format!("must lie in (0, 0.5), got {}", c.eta)));
        }
        if finite("constraints.penalty_weight", c.penalty_weight)? < 0.0 {
            return Err(invalid(
                "constraints.penalty_weight",
                format!("must be non-negative, got {}", c.penalty_weight),
            ));
        }

        let s = &self.sampler;
        let epsilon = finite("sampler.epsilon", s.epsilon)?;
        if epsilon <= 0.0 {
            return Err(invalid("sampler.epsilon", format!("must be positive, got {epsilon}")));
        }
        let sigma_m = match s.kind {
            SamplerKind::Hmc => 0.0,
            SamplerKind::Qhmc => finite("sampler.sigma_m", s.sigma_m)?,
        };
        if sigma_m < 0.0 {
            return Err(invalid("sampler.sigma_m", format!("must be non-negative, got {sigma_m}")));
        }
        let qhmc = QhmcConfig {
            epsilon,
            steps: count("sampler.steps", s.steps, 1)?,
            mu_m: finite("sampler.mu_m", s.mu_m)?,
            sigma_m,
            n_samples: count("sampler.n_samples", s.n_samples, 1)?,
            burn_in: count("sampler.burn_in", s.burn_in, 0)?,
            seed: 0,
        };

        let a = &self.adaptive;
        let strategy: Strategy = a.strategy.parse().map_err(|e| invalid("adaptive.strategy", e))?;
        let n_candidates = count("adaptive.n_candidates", a.n_candidates, 1)?;
        let max_constraints = count("adaptive.max_constraints", a.max_constraints, 0)?;
        if max_constraints > n_candidates {
            return Err(invalid(
                "adaptive.max_constraints",
                format!("{max_constraints} exceeds n_candidates = {n_candidates}"),
            ));
        }
        let variance_threshold = finite("adaptive.variance_threshold", a.variance_threshold)?;
        if variance_threshold <= 0.0 {
            return Err(invalid(
                "adaptive.variance_threshold",
                format!("must be positive, got {variance_threshold}"),
            ));
        }

        Ok(Resolved {
            spec: BenchmarkSpec {
                function,
                n_train,
                n_test,
                snr_percent: snr,
                constraint,
                seed,
            },
            experiment: ExperimentConfig {
                method: self.method.clone(),
                qhmc,
                mode: match c.mode {
                    ModeName::Hard => Enforcement::Hard,
                    ModeName::Soft => Enforcement::Soft,
                },
                eta: c.eta,
                penalty_weight: c.penalty_weight,
                strategy,
                max_constraints,
                n_candidates,
                variance_threshold,
            },
        })
    }

    /// The sweep grid, sorted by (n_train, snr_percent) with duplicates removed.
    pub fn sweep_grid(&self) -> Result<Vec<(i64, f64)>, ConfigError> {
        let s = &self.sweep;
        if s.n_train.is_empty() {
            return Err(invalid("sweep.n_train", "must list at least one value"));
        }
        if s.snr_percent.is_empty() {
            return Err(invalid("sweep.snr_percent", "must list at least one value"));
        }
        let mut n: Vec<i64> = s.n_train.clone();
        n.sort_unstable();
        n.dedup();
        let mut snr = s.snr_percent.clone();
        if let Some(bad) = snr.iter().find(|v| !v.is_finite()) {
            return Err(invalid("sweep.snr_percent", format!("must be finite, got {bad}")));
        }
        snr.sort_by(f64::total_cmp);
        snr.dedup();
        Ok(n.iter().flat_map(|&a| snr.iter().map(move |&b| (a, b))).collect())
    }
}
