//! Probabilistic inequality and monotonicity constraints on the GP posterior.
//!
//! A constraint at x holds when the posterior puts at most η of its mass on
//! the wrong side of the bound, i.e. when the margin y*(x) − β·s(x) − b is
//! non-negative with β = −Φ⁻¹(η). Monotonicity uses the same margin on the
//! posterior of ∂f/∂x_i with b = 0.
//!
//! Soft constraints add λ·Σ max(0, −margin)² to the sampling potential. Hard
//! constraints make the potential infinite at any violating hyperparameter
//! state, so the Metropolis step rejects it.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::gp::{Dataset, GpModel};
use crate::kernels::Hyperparams;
use crate::normal;
use crate::points::Points;
use crate::sampler::Target;

pub const DEFAULT_ETA: f64 = 0.022;
pub const DEFAULT_PENALTY_WEIGHT: f64 = 100.0;

/// Central-difference step for the penalty gradient, in log-hyperparameter space.
pub const PENALTY_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    /// f(x) ≥ bound.
    LowerBound { bound: f64 },
    /// ∂f/∂x_i ≥ 0 for each listed dimension.
    Monotone { dims: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enforcement {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub points: Points,
    pub kind: ConstraintKind,
    pub mode: Enforcement,
    pub eta: f64,
    pub penalty_weight: f64,
}

impl ConstraintSet {
    /// An empty set with the default η and λ.
    pub fn new(dim: usize, kind: ConstraintKind, mode: Enforcement) -> Self {
        Self {
            points: Points::empty(dim),
            kind,
            mode,
            eta: DEFAULT_ETA,
            penalty_weight: DEFAULT_PENALTY_WEIGHT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(Error::InvalidConfig(format!("eta must lie in (0, 0.5), got {}", self.eta)));
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "penalty_weight must be non-negative, got {}",
                self.penalty_weight
            )));
        }
        match &self.kind {
            ConstraintKind::LowerBound { bound } if !bound.is_finite() => {
                Err(Error::InvalidConfig(format!("bound must be finite, got {bound}")))
            }
            ConstraintKind::Monotone { dims } => {
                if dims.is_empty() {
                    return Err(Error::InvalidConfig("monotone constraint needs at least one dimension".into()));
                }
                match dims.iter().find(|&&i| i >= self.points.dim()) {
                    Some(&i) => Err(Error::IndexOutOfRange {
                        index: i,
                        dim: self.points.dim(),
                    }),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// β = −Φ⁻¹(η).
    pub fn beta(&self) -> f64 {
        -normal::quantile(self.eta)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Margins evaluated per point.
    pub fn margins_per_point(&self) -> usize {
        match &self.kind {
            ConstraintKind::LowerBound { .. } => 1,
            ConstraintKind::Monotone { dims } => dims.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub margins: Vec<f64>,
    pub violations: Vec<usize>,
    pub worst: f64,
}

impl MarginReport {
    fn from_margins(margins: Vec<f64>) -> Self {
        let violations = margins
            .iter()
            .enumerate()
            .filter(|(_, m)| **m < 0.0)
            .map(|(i, _)| i)
            .collect();
        let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            margins,
            violations,
            worst,
        }
    }
}

/// Per-location posterior moments of the constrained quantity, with the bound.
/// For monotone kinds the layout is point-major: entry `p * dims + k` is point
/// `p`, active dimension `k`.
#[derive(Debug, Clone)]
pub struct ConstrainedMoments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub bound: f64,
}

impl ConstrainedMoments {
    pub fn margins(&self, beta: f64) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m - beta * s - self.bound)
            .collect()
    }
}

/// Posterior moments of the constrained quantity at `points`.
pub fn constrained_moments(model: &GpModel<'_>, points: &Points, kind: &ConstraintKind) -> Result<ConstrainedMoments> {
    if points.is_empty() {
        return Ok(ConstrainedMoments {
            mean: Vec::new(),
            std: Vec::new(),
            bound: 0.0,
        });
    }
    match kind {
        ConstraintKind::LowerBound { bound } => {
            let p = model.posterior(points)?;
            Ok(ConstrainedMoments {
                mean: p.mean,
                std: p.std,
                bound: *bound,
            })
        }
        ConstraintKind::Monotone { dims } => {
            let per_dim = model.derivative_posteriors(points, dims)?;
            let k = dims.len();
            let mut mean = vec![0.0; points.len() * k];
            let mut std = vec![0.0; points.len() * k];
            for (j, post) in per_dim.iter().enumerate() {
                for p in 0..points.len() {
                    mean[p * k + j] = post.mean[p];
                    std[p * k + j] = post.std[p];
                }
            }
            Ok(ConstrainedMoments { mean, std, bound: 0.0 })
        }
    }
}

pub fn margins_of(model: &GpModel<'_>, cset: &ConstraintSet) -> Result<MarginReport> {
    let moments = constrained_moments(model, &cset.points, &cset.kind)?;
    Ok(MarginReport::from_margins(moments.margins(cset.beta())))
}

/// Constraint margins of the GP at `hyper` on `data`.
pub fn margin(hyper: &Hyperparams, data: &Dataset, cset: &ConstraintSet) -> Result<MarginReport> {
    cset.validate()?;
    margins_of(&GpModel::fit(*hyper, data)?, cset)
}

/// Φ((b − y*)/s): posterior probability that the latent value is below `b`.
pub fn violation_probability(y_star: f64, s: f64, b: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidData(format!("posterior std must be positive, got {s}")));
    }
    Ok(normal::cdf((b - y_star) / s))
}

fn soft_penalty(margins: &[f64], weight: f64) -> f64 {
    weight * margins.iter().map(|m| (-m).max(0.0).powi(2)).sum::<f64>()
}

/// Penalized potential of an already fitted model.
pub fn penalized_potential_of(model: &GpModel<'_>, cset: &ConstraintSet) -> Result<f64> {
    let base = model.potential();
    if cset.is_empty() {
        return Ok(base);
    }
    let report = margins_of(model, cset)?;
    Ok(match cset.mode {
        Enforcement::Soft => base + soft_penalty(&report.margins, cset.penalty_weight),
        Enforcement::Hard if report.violations.is_empty() => base,
        Enforcement::Hard => f64::INFINITY,
    })
}

pub fn penalized_potential(hyper: &Hyperparams, data: &Dataset, cset: &ConstraintSet) -> Result<f64> {
    cset.validate()?;
    penalized_potential_of(&GpModel::fit(*hyper, data)?, cset)
}

/// Gradient of the penalized potential of an already fitted model. The soft
/// penalty is differentiated by central differences; hard mode returns the
/// unconstrained gradient.
pub fn penalized_gradient_of(model: &GpModel<'_>, cset: &ConstraintSet) -> Result<[f64; 3]> {
    let mut grad = model.potential_grad();
    if cset.is_empty() || cset.mode == Enforcement::Hard || cset.penalty_weight == 0.0 {
        return Ok(grad);
    }
    let here = margins_of(model, cset)?;
    if here.violations.is_empty() {
        return Ok(grad);
    }
    let data = model.data();
    let base = model.hyper().to_log();
    let penalty_at = |theta: [f64; 3]| -> Result<f64> {
        let m = GpModel::fit(Hyperparams::from_log(theta)?, data)?;
        Ok(soft_penalty(&margins_of(&m, cset)?.margins, cset.penalty_weight))
    };
    for (i, g) in grad.iter_mut().enumerate() {
        let mut up = base;
        let mut down = base;
        up[i] += PENALTY_FD_STEP;
        down[i] -= PENALTY_FD_STEP;
        *g += (penalty_at(up)? - penalty_at(down)?) / (2.0 * PENALTY_FD_STEP);
    }
    Ok(grad)
}

pub fn penalized_gradient(hyper: &Hyperparams, data: &Dataset, cset: &ConstraintSet) -> Result<[f64; 3]> {
    cset.validate()?;
    penalized_gradient_of(&GpModel::fit(*hyper, data)?, cset)
}

/// The constrained GP posterior over log-hyperparameters as a sampling target.
///
/// The most recent fit is cached, so the potential at the end of a leapfrog
/// trajectory reuses the factorization made for the last gradient.
pub struct GpTarget<'a> {
    data: &'a Dataset,
    cset: &'a ConstraintSet,
    cache: RefCell<Option<([f64; 3], GpModel<'a>)>>,
}

impl<'a> GpTarget<'a> {
    pub fn new(data: &'a Dataset, cset: &'a ConstraintSet) -> Result<Self> {
        cset.validate()?;
        if cset.points.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                found: cset.points.dim(),
            });
        }
        Ok(Self {
            data,
            cset,
            cache: RefCell::new(None),
        })
    }

    fn with_model<T>(&self, x: &[f64], f: impl FnOnce(&GpModel<'a>) -> Result<T>) -> Result<T> {
        let theta = [x[0], x[1], x[2]];
        let mut cache = self.cache.borrow_mut();
        if let Some((key, model)) = cache.as_ref() {
            if *key == theta {
                return f(model);
            }
        }
        let model = GpModel::fit(Hyperparams::from_log(theta)?, self.data)?;
        let out = f(&model);
        *cache = Some((theta, model));
        out
    }
}

impl Target for GpTarget<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn potential(&self, x: &[f64]) -> f64 {
        self.with_model(x, |m| penalized_potential_of(m, self.cset))
            .unwrap_or(f64::INFINITY)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.with_model(x, |m| penalized_gradient_of(m, self.cset))
            .map(|g| g.to_vec())
            .unwrap_or_else(|_| vec![f64::NAN; 3])
    }
}
