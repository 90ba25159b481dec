//! Adaptive constraint placement.
//!
//! Training starts from an (often empty) constraint set. After each round of
//! sampling, one more constraint point is picked from a finite candidate grid
//! and the hyperparameters are retrained.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;

use crate::bench::relative_error;
use crate::constraints::{
    constrained_moments, margins_of, ConstraintKind, ConstraintSet, Enforcement, GpTarget, DEFAULT_PENALTY_WEIGHT,
};
use crate::error::{Error, Result};
use crate::gp::{initial_hyperparams, Dataset, GpModel};
use crate::kernels::Hyperparams;
use crate::points::Points;
use crate::rng::{self, SeedRng};
use crate::sampler::{run_chain, QhmcConfig, SampleChain, Target};

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.20;
pub const DEFAULT_GRID_SIZE: usize = 512;

/// Upper bound on the chain draws averaged for the chain-mean prediction.
const CHAIN_AVERAGE_DRAWS: usize = 100;

/// Penalty-weight rounds, simplex iterations per round and initial simplex
/// edge (in log-hyperparameter units) when moving an infeasible hard-mode start.
const RESTORE_ROUNDS: i32 = 5;
const RESTORE_ITERS: u64 = 300;
const RESTORE_SIMPLEX_SIZE: f64 = 0.5;

/// Times a step's chain is rerun at half the step size after accepting nothing.
pub const EPSILON_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Add the candidate whose constraint margin is most negative.
    ConstraintAdaptive,
    /// Add the candidate with the largest predictive variance.
    VarianceAdaptive,
    /// Variance rule until the largest variance drops to the threshold, then
    /// the constraint rule.
    Combined,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::ConstraintAdaptive => "constraint_adaptive",
            Strategy::VarianceAdaptive => "variance_adaptive",
            Strategy::Combined => "combined",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constraint_adaptive" => Ok(Strategy::ConstraintAdaptive),
            "variance_adaptive" => Ok(Strategy::VarianceAdaptive),
            "combined" => Ok(Strategy::Combined),
            other => Err(Error::InvalidConfig(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    pub strategy: Strategy,
    pub max_constraints: usize,
    pub candidates: Points,
    pub variance_threshold: f64,
    pub initial_constraints: Points,
}

impl AdaptiveConfig {
    /// Config over a seeded Latin-hypercube grid of `n` points in `domain`.
    pub fn with_lhs(
        strategy: Strategy,
        max_constraints: usize,
        domain: &[(f64, f64)],
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::split(seed, rng::streams::CANDIDATES);
        Ok(Self {
            strategy,
            max_constraints,
            candidates: latin_hypercube(n, domain, &mut rng)?,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            initial_constraints: Points::empty(domain.len()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Empty("candidate grid"));
        }
        if self.max_constraints > self.candidates.len() {
            return Err(Error::InvalidConfig(format!(
                "max_constraints ({}) exceeds the candidate grid size ({})",
                self.max_constraints,
                self.candidates.len()
            )));
        }
        if !(self.variance_threshold > 0.0 && self.variance_threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "variance_threshold must be positive, got {}",
                self.variance_threshold
            )));
        }
        if self.initial_constraints.dim() != self.candidates.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.candidates.dim(),
                found: self.initial_constraints.dim(),
            });
        }
        Ok(())
    }
}

/// `n` points in the box `domain`, one per stratum in every coordinate.
pub fn latin_hypercube(n: usize, domain: &[(f64, f64)], rng: &mut SeedRng) -> Result<Points> {
    if n == 0 {
        return Err(Error::Empty("latin hypercube"));
    }
    if domain.is_empty() {
        return Err(Error::Empty("domain"));
    }
    let dim = domain.len();
    let mut data = vec![0.0; n * dim];
    for (j, &(lo, hi)) in domain.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidConfig(format!("invalid interval [{lo}, {hi}] in dimension {j}")));
        }
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        for (i, s) in strata.into_iter().enumerate() {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            data[i * dim + j] = lo + (hi - lo) * u;
        }
    }
    Points::new(data, dim)
}

/// The outcome of one selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// The value the rule maximized or minimized: a variance or a margin.
    pub score: f64,
    pub rule: Strategy,
}

/// Applies a strategy to precomputed per-candidate variances and margins.
/// Excluded candidates are skipped; ties go to the lowest index.
pub fn select_from_scores(
    strategy: Strategy,
    variances: &[f64],
    margins: &[f64],
    threshold: f64,
    excluded: &[bool],
) -> Result<Option<Selection>> {
    let n = variances.len();
    if n == 0 {
        return Err(Error::Empty("candidate grid"));
    }
    if margins.len() != n || excluded.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if margins.len() != n { margins.len() } else { excluded.len() },
        });
    }
    let open = || (0..n).filter(|&i| !excluded[i]);
    let by_variance = || {
        let mut best: Option<usize> = None;
        for i in open() {
            if best.is_none_or(|b| variances[i] > variances[b]) {
                best = Some(i);
            }
        }
        best.map(|index| Selection {
            index,
            score: variances[index],
            rule: Strategy::VarianceAdaptive,
        })
    };
    let by_margin = || {
        let mut best: Option<usize> = None;
        for i in open().filter(|&i| margins[i] < 0.0) {
            if best.is_none_or(|b| margins[i] < margins[b]) {
                best = Some(i);
            }
        }
        best.map(|index| Selection {
            index,
            score: margins[index],
            rule: Strategy::ConstraintAdaptive,
        })
    };
    Ok(match strategy {
        Strategy::VarianceAdaptive => by_variance(),
        Strategy::ConstraintAdaptive => by_margin(),
        Strategy::Combined => match by_variance() {
            Some(s) if s.score > threshold => Some(s),
            _ => by_margin(),
        },
    })
}

/// Per-candidate scores under the current model: predictive variance of f,
/// the smallest constraint margin over a point's constrained quantities, and
/// whether the posterior mean itself breaks the constraint.
#[derive(Debug, Clone)]
pub struct CandidateScores {
    pub variances: Vec<f64>,
    pub margins: Vec<f64>,
    pub mean_violates: Vec<bool>,
}

pub fn score_candidates(model: &GpModel<'_>, cset: &ConstraintSet, candidates: &Points) -> Result<CandidateScores> {
    let variances: Vec<f64> = model.posterior(candidates)?.variance().collect();
    let moments = constrained_moments(model, candidates, &cset.kind)?;
    let per = cset.margins_per_point();
    let raw = moments.margins(cset.beta());
    let margins = raw
        .chunks(per)
        .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let mean_violates = moments
        .mean
        .chunks(per)
        .map(|c| c.iter().any(|m| *m < moments.bound))
        .collect();
    Ok(CandidateScores {
        variances,
        margins,
        mean_violates,
    })
}

pub fn select_point(
    strategy: Strategy,
    model: &GpModel<'_>,
    cset: &ConstraintSet,
    candidates: &Points,
    threshold: f64,
    excluded: &[bool],
) -> Result<Option<Selection>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate grid"));
    }
    let scores = score_candidates(model, cset, candidates)?;
    select_from_scores(strategy, &scores.variances, &scores.margins, threshold, excluded)
}

/// Held-out inputs with their true function values.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub x: Points,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub n_constraints: usize,
    pub rel_error: f64,
    pub mean_post_var: f64,
    /// Candidate added after this step's training, if any.
    pub location: Option<Vec<f64>>,
    pub selection: Option<Selection>,
    /// Candidates whose posterior mean breaks the constraint at this step.
    pub mean_violations: usize,
    pub acceptance_rate: f64,
    /// Leapfrog step size of this step's chain after any retries.
    pub epsilon: f64,
    pub hyper: Hyperparams,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptiveTrace {
    pub records: Vec<TraceRecord>,
    /// Relative error of the chain-averaged posterior mean at the final step.
    pub chain_rel_error: f64,
}

impl AdaptiveTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace has at least one record")
    }

    pub fn first(&self) -> &TraceRecord {
        &self.records[0]
    }
}

pub struct AdaptiveOutcome<'a> {
    pub model: GpModel<'a>,
    pub constraints: ConstraintSet,
    pub trace: AdaptiveTrace,
    pub chain: SampleChain,
}

/// Runs one step's chain. A chain with no accepted proposal is retried with
/// the step size halved, up to [`EPSILON_RETRIES`] times; the returned config
/// is the one that succeeded.
fn train_step(
    data: &Dataset,
    cset: &ConstraintSet,
    init: &Hyperparams,
    config: &QhmcConfig,
) -> Result<(SampleChain, QhmcConfig)> {
    let target = GpTarget::new(data, cset)?;
    let mut start = init.to_log();
    if cset.mode == Enforcement::Hard && !target.potential(&start).is_finite() {
        start = restore_feasibility(data, cset, start)?;
    }
    let mut config = config.clone();
    let mut retries = 0;
    loop {
        match run_chain(&target, &start, &config) {
            Err(Error::NoAcceptance { .. }) if retries < EPSILON_RETRIES => {
                config.epsilon *= 0.5;
                retries += 1;
            }
            other => return other.map(|chain| (chain, config)),
        }
    }
}

/// Soft-penalized potential that remembers the best hard-feasible point it
/// was evaluated at.
struct RestoreCost<'a, 'd> {
    data: &'d Dataset,
    cset: &'a ConstraintSet,
    weight: f64,
    best: &'a RefCell<Option<(f64, Vec<f64>)>>,
}

impl CostFunction for RestoreCost<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let Ok(hyper) = Hyperparams::from_log([p[0], p[1], p[2]]) else {
            return Ok(f64::INFINITY);
        };
        let Ok(model) = GpModel::fit(hyper, self.data) else {
            return Ok(f64::INFINITY);
        };
        let Ok(report) = margins_of(&model, self.cset) else {
            return Ok(f64::INFINITY);
        };
        let base = model.potential();
        if report.violations.is_empty() {
            let mut best = self.best.borrow_mut();
            if best.as_ref().is_none_or(|(u, _)| base < *u) {
                *best = Some((base, p.clone()));
            }
        }
        let hinge: f64 = report.margins.iter().map(|m| (-m).max(0.0).powi(2)).sum();
        Ok(base + self.weight * hinge)
    }
}

/// A hard-mode chain started at an infeasible state follows the unconstrained
/// gradient and may never reach a feasible one. This searches for a feasible
/// start by Nelder-Mead on the soft-penalized potential, raising the penalty
/// weight tenfold per round, and returns the lowest-potential feasible point
/// visited. If none is found the last optimum is returned and the chain
/// reports the failure.
fn restore_feasibility(data: &Dataset, cset: &ConstraintSet, start: [f64; 3]) -> Result<[f64; 3]> {
    let base_weight = if cset.penalty_weight > 0.0 {
        cset.penalty_weight
    } else {
        DEFAULT_PENALTY_WEIGHT
    };
    let best = RefCell::new(None);
    let mut x = start.to_vec();
    for round in 0..RESTORE_ROUNDS {
        let cost = RestoreCost {
            data,
            cset,
            weight: base_weight * 10f64.powi(round),
            best: &best,
        };
        let simplex = (0..=3)
            .map(|i| {
                let mut v = x.clone();
                if i > 0 {
                    v[i - 1] += RESTORE_SIMPLEX_SIZE;
                }
                v
            })
            .collect();
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-8)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let result = Executor::new(cost, solver)
            .configure(|state| state.max_iters(RESTORE_ITERS))
            .run()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if let Some((_, p)) = best.borrow().as_ref() {
            return Ok([p[0], p[1], p[2]]);
        }
        if let Some(p) = result.state().get_best_param() {
            x = p.clone();
        }
    }
    Ok([x[0], x[1], x[2]])
}

fn chain_average_error(data: &Dataset, chain: &SampleChain, test: &TestSet) -> Result<f64> {
    let n = chain.samples.len();
    let stride = n.div_ceil(CHAIN_AVERAGE_DRAWS).max(1);
    let mut mean = vec![0.0; test.x.len()];
    let mut used = 0usize;
    for s in chain.samples.iter().step_by(stride) {
        let model = GpModel::fit(Hyperparams::from_log([s[0], s[1], s[2]])?, data)?;
        for (acc, v) in mean.iter_mut().zip(model.predict_mean(&test.x)?) {
            *acc += v;
        }
        used += 1;
    }
    mean.iter_mut().for_each(|v| *v /= used as f64);
    relative_error(&mean, &test.truth)
}

/// Grows the constraint set one point at a time, retraining by QHMC after
/// every addition. Step k's chain uses a seed derived from `qhmc.seed` and
/// starts from step k−1's working hyperparameters (the minimum-potential
/// sample).
pub fn adaptive_train<'a>(
    data: &'a Dataset,
    qhmc: &QhmcConfig,
    template: &ConstraintSet,
    adaptive: &AdaptiveConfig,
    test: &TestSet,
) -> Result<AdaptiveOutcome<'a>> {
    qhmc.validate()?;
    adaptive.validate()?;
    template.validate()?;
    if adaptive.candidates.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: adaptive.candidates.dim(),
        });
    }
    if test.x.len() != test.truth.len() {
        return Err(Error::DimensionMismatch {
            expected: test.x.len(),
            found: test.truth.len(),
        });
    }
    if let ConstraintKind::Monotone { dims } = &template.kind {
        if let Some(&d) = dims.iter().find(|&&d| d >= data.dim()) {
            return Err(Error::IndexOutOfRange { index: d, dim: data.dim() });
        }
    }

    let mut cset = template.clone();
    cset.points = adaptive.initial_constraints.clone();
    let mut excluded: Vec<bool> = adaptive
        .candidates
        .rows()
        .map(|c| cset.points.rows().any(|p| p == c))
        .collect();

    let mut hyper = initial_hyperparams(data);
    let mut records = Vec::new();
    let mut step = 0usize;
    loop {
        let config = QhmcConfig {
            seed: rng::derive_seed(qhmc.seed, step as u64),
            ..qhmc.clone()
        };
        let (chain, used) = train_step(data, &cset, &hyper, &config).map_err(|e| e.at_step(step))?;
        let best = chain.min_potential_sample();
        hyper = Hyperparams::from_log([best[0], best[1], best[2]]).map_err(|e| e.at_step(step))?;
        let model = GpModel::fit(hyper, data).map_err(|e| e.at_step(step))?;

        let post = model.posterior(&test.x).map_err(|e| e.at_step(step))?;
        let rel_error = relative_error(&post.mean, &test.truth).map_err(|e| e.at_step(step))?;
        let mean_post_var = post.mean_variance();

        let added = cset.len() < adaptive.max_constraints;
        let (selection, mean_violations) = {
            let scores = score_candidates(&model, &cset, &adaptive.candidates).map_err(|e| e.at_step(step))?;
            let violations = scores.mean_violates.iter().filter(|v| **v).count();
            let sel = if added {
                select_from_scores(
                    adaptive.strategy,
                    &scores.variances,
                    &scores.margins,
                    adaptive.variance_threshold,
                    &excluded,
                )
                .map_err(|e| e.at_step(step))?
            } else {
                None
            };
            (sel, violations)
        };

        records.push(TraceRecord {
            step,
            n_constraints: cset.len(),
            rel_error,
            mean_post_var,
            location: selection.map(|s| adaptive.candidates.row(s.index).to_vec()),
            selection,
            mean_violations,
            acceptance_rate: chain.acceptance_rate,
            epsilon: used.epsilon,
            hyper,
        });

        match selection {
            Some(s) => {
                cset.points.push(adaptive.candidates.row(s.index))?;
                excluded[s.index] = true;
                step += 1;
            }
            None => {
                let chain_rel_error = chain_average_error(data, &chain, test).map_err(|e| e.at_step(step))?;
                return Ok(AdaptiveOutcome {
                    model,
                    constraints: cset,
                    trace: AdaptiveTrace {
                        records,
                        chain_rel_error,
                    },
                    chain,
                });
            }
        }
    }
}
