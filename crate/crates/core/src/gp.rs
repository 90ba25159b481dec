//! GP data model: marginal likelihood, its gradient, and the predictive
//! posteriors over function values and partial derivatives.

use std::f64::consts::PI;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::kernels::{se_from_sq, train_cov_from_sq, Cholesky, Hyperparams};
use crate::points::{squared_distance, Points};

/// Training inputs and observations. Observations are stored with their mean
/// removed; the mean is added back at prediction time.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Points,
    y: Vec<f64>,
    y_mean: f64,
    sq_dist: Mat<f64>,
}

impl Dataset {
    /// Centers `y` on its sample mean.
    pub fn new(x: Points, y: Vec<f64>) -> Result<Self> {
        Self::build(x, y, true)
    }

    /// Keeps `y` as given (zero prior mean).
    pub fn uncentered(x: Points, y: Vec<f64>) -> Result<Self> {
        Self::build(x, y, false)
    }

    fn build(x: Points, mut y: Vec<f64>, center: bool) -> Result<Self> {
        if y.is_empty() || x.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if x.len() != y.len() {
            return Err(Error::InvalidData(format!(
                "{} input rows but {} observations",
                x.len(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observations"));
        }
        let n = x.len();
        let mut sq_dist = Mat::zeros(n, n);
        for b in 0..n {
            for a in b + 1..n {
                if x.row(a) == x.row(b) {
                    return Err(Error::InvalidData(format!(
                        "duplicate input rows {b} and {a}"
                    )));
                }
                let sq = squared_distance(x.row(a), x.row(b));
                sq_dist[(a, b)] = sq;
                sq_dist[(b, a)] = sq;
            }
        }
        let y_mean = if center {
            y.iter().sum::<f64>() / y.len() as f64
        } else {
            0.0
        };
        if center {
            y.iter_mut().for_each(|v| *v -= y_mean);
        }
        Ok(Self { x, y, y_mean, sq_dist })
    }

    pub fn x(&self) -> &Points {
        &self.x
    }

    /// Centered observations.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// Pairwise squared distances between training inputs.
    pub fn sq_dist(&self) -> MatRef<'_, f64> {
        self.sq_dist.as_ref()
    }
}

/// Posterior mean and standard deviation at a set of query points.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub query_points: Points,
}

impl PosteriorSummary {
    pub fn variance(&self) -> impl Iterator<Item = f64> + '_ {
        self.std.iter().map(|s| s * s)
    }

    pub fn mean_variance(&self) -> f64 {
        self.variance().sum::<f64>() / self.std.len().max(1) as f64
    }
}

/// Independent N(0, 2²) priors on (log σ, log l, log σ_n).
pub mod hyperprior {
    use super::*;

    pub const MEAN: f64 = 0.0;
    pub const STD: f64 = 2.0;

    pub fn neg_log_density(hyper: &Hyperparams) -> f64 {
        let norm = 0.5 * (2.0 * PI * STD * STD).ln();
        hyper
            .to_log()
            .iter()
            .map(|t| (t - MEAN).powi(2) / (2.0 * STD * STD) + norm)
            .sum()
    }

    pub fn gradient(hyper: &Hyperparams) -> [f64; 3] {
        hyper.to_log().map(|t| (t - MEAN) / (STD * STD))
    }
}

/// A GP conditioned on a dataset at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GpModel<'a> {
    hyper: Hyperparams,
    data: &'a Dataset,
    cov: Mat<f64>,
    chol: Cholesky,
    alpha: Vec<f64>,
    quad: f64,
}

impl<'a> GpModel<'a> {
    pub fn fit(hyper: Hyperparams, data: &'a Dataset) -> Result<Self> {
        hyper.validate()?;
        let mut k = train_cov_from_sq(data.sq_dist(), &hyper, true);
        let chol = k.cholesky()?;
        let z = chol.solve_lower(data.y());
        let quad = z.iter().map(|v| v * v).sum();
        let mut alpha = Mat::from_fn(z.len(), 1, |i, _| z[i]);
        chol.solve_upper_in_place(alpha.as_mut());
        let alpha = alpha.col_as_slice(0).to_vec();
        Ok(Self {
            hyper,
            data,
            cov: k.entries,
            chol,
            alpha,
            quad,
        })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn jitter(&self) -> f64 {
        self.chol.jitter()
    }

    /// ½[yᵀK⁻¹y + log|K| + N log 2π].
    pub fn nll(&self) -> f64 {
        let n = self.data.len() as f64;
        0.5 * (self.quad + self.chol.log_det() + n * (2.0 * PI).ln())
    }

    /// Gradient of [`nll`](Self::nll) in (log σ, log l, log σ_n), from
    /// ½ tr((K⁻¹ − ααᵀ) ∂K/∂θ). Jitter is held constant.
    pub fn nll_grad(&self) -> [f64; 3] {
        let n = self.data.len();
        let d2 = self.data.sq_dist();
        let kinv = self.chol.inverse();
        let sig2 = self.hyper.signal_variance();
        let l2 = (2.0 * self.hyper.log_l).exp();
        let a = &self.alpha;

        let mut g_sigma = 0.0;
        let mut g_l = 0.0;
        let mut trace_w = 0.0;
        for j in 0..n {
            let w_jj = kinv[(j, j)] - a[j] * a[j];
            trace_w += w_jj;
            g_sigma += w_jj * sig2;
            for i in j + 1..n {
                let sq = d2[(i, j)];
                let kf = self.cov[(i, j)];
                let w = kinv[(i, j)] - a[i] * a[j];
                g_sigma += 2.0 * w * kf;
                g_l += w * kf * sq;
            }
        }
        // Off-diagonal pairs were counted once; the factor 2 and the ½ cancel.
        [g_sigma, g_l / l2, self.hyper.noise_variance() * trace_w]
    }

    pub fn potential(&self) -> f64 {
        self.nll() + hyperprior::neg_log_density(&self.hyper)
    }

    pub fn potential_grad(&self) -> [f64; 3] {
        let g = self.nll_grad();
        let p = hyperprior::gradient(&self.hyper);
        [g[0] + p[0], g[1] + p[1], g[2] + p[2]]
    }

    fn check_query(&self, query: &Points) -> Result<()> {
        if query.dim() != self.data.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data.dim(),
                found: query.dim(),
            });
        }
        Ok(())
    }

    /// Posterior mean only; O(N·M).
    pub fn predict_mean(&self, query: &Points) -> Result<Vec<f64>> {
        self.check_query(query)?;
        let x = self.data.x();
        Ok(query
            .rows()
            .map(|q| {
                x.rows()
                    .zip(&self.alpha)
                    .map(|(xa, a)| se_from_sq(squared_distance(xa, q), &self.hyper) * a)
                    .sum::<f64>()
                    + self.data.y_mean()
            })
            .collect())
    }

    /// Latent-function posterior (no σ_n² floor on the variance).
    pub fn posterior(&self, query: &Points) -> Result<PosteriorSummary> {
        self.check_query(query)?;
        let x = self.data.x();
        let cross = Mat::from_fn(x.len(), query.len(), |a, b| {
            se_from_sq(squared_distance(x.row(a), query.row(b)), &self.hyper)
        });
        Ok(self.summarize(cross, self.hyper.signal_variance(), self.data.y_mean(), query))
    }

    /// Posterior over ∂f/∂x_dim at the query points.
    pub fn derivative_posterior(&self, query: &Points, dim: usize) -> Result<PosteriorSummary> {
        Ok(self.derivative_posteriors(query, &[dim])?.remove(0))
    }

    /// Derivative posteriors for several dimensions, sharing one kernel
    /// evaluation per training/query pair and one triangular solve.
    pub fn derivative_posteriors(&self, query: &Points, dims: &[usize]) -> Result<Vec<PosteriorSummary>> {
        self.check_query(query)?;
        if let Some(&d) = dims.iter().find(|&&d| d >= self.data.dim()) {
            return Err(Error::IndexOutOfRange {
                index: d,
                dim: self.data.dim(),
            });
        }
        let x = self.data.x();
        let m = query.len();
        let l2 = (2.0 * self.hyper.log_l).exp();
        let base = Mat::from_fn(x.len(), m, |a, b| {
            se_from_sq(squared_distance(x.row(a), query.row(b)), &self.hyper)
        });
        let cross = Mat::from_fn(x.len(), m * dims.len(), |a, c| {
            let (j, b) = (c / m, c % m);
            let d = dims[j];
            base[(a, b)] * (x.row(a)[d] - query.row(b)[d]) / l2
        });
        let prior_var = self.hyper.signal_variance() / l2;
        let (mean, std) = self.moments(cross, prior_var, 0.0);
        Ok((0..dims.len())
            .map(|j| PosteriorSummary {
                mean: mean[j * m..(j + 1) * m].to_vec(),
                std: std[j * m..(j + 1) * m].to_vec(),
                query_points: query.clone(),
            })
            .collect())
    }

    fn summarize(&self, cross: Mat<f64>, prior_var: f64, offset: f64, query: &Points) -> PosteriorSummary {
        let (mean, std) = self.moments(cross, prior_var, offset);
        PosteriorSummary {
            mean,
            std,
            query_points: query.clone(),
        }
    }

    /// Mean and standard deviation for each column of a training-by-query
    /// cross-covariance.
    fn moments(&self, mut cross: Mat<f64>, prior_var: f64, offset: f64) -> (Vec<f64>, Vec<f64>) {
        let m = cross.ncols();
        let mean: Vec<f64> = (0..m)
            .map(|j| {
                cross
                    .col_as_slice(j)
                    .iter()
                    .zip(&self.alpha)
                    .map(|(k, a)| k * a)
                    .sum::<f64>()
                    + offset
            })
            .collect();
        self.chol.solve_lower_in_place(cross.as_mut());
        let std = (0..m)
            .map(|j| {
                let explained: f64 = cross.col_as_slice(j).iter().map(|v| v * v).sum();
                (prior_var - explained).max(0.0).sqrt()
            })
            .collect();
        (mean, std)
    }
}

pub fn nll(hyper: &Hyperparams, data: &Dataset) -> Result<f64> {
    Ok(GpModel::fit(*hyper, data)?.nll())
}

pub fn nll_grad(hyper: &Hyperparams, data: &Dataset) -> Result<[f64; 3]> {
    Ok(GpModel::fit(*hyper, data)?.nll_grad())
}

/// Unconstrained sampling potential: NLL plus the negative log hyperprior.
pub fn potential(hyper: &Hyperparams, data: &Dataset) -> Result<f64> {
    Ok(GpModel::fit(*hyper, data)?.potential())
}

pub fn potential_grad(hyper: &Hyperparams, data: &Dataset) -> Result<[f64; 3]> {
    Ok(GpModel::fit(*hyper, data)?.potential_grad())
}

pub fn posterior(hyper: &Hyperparams, data: &Dataset, query: &Points) -> Result<PosteriorSummary> {
    GpModel::fit(*hyper, data)?.posterior(query)
}

pub fn derivative_posterior(
    hyper: &Hyperparams,
    data: &Dataset,
    query: &Points,
    dim: usize,
) -> Result<PosteriorSummary> {
    GpModel::fit(*hyper, data)?.derivative_posterior(query, dim)
}

/// Data-driven chain start: σ from the spread of y, l from the spread of the
/// inputs, σ_n at a tenth of σ.
pub fn initial_hyperparams(data: &Dataset) -> Hyperparams {
    let n = data.len() as f64;
    let y_std = (data.y().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let sigma = if y_std > 0.0 { y_std } else { 1.0 };
    let x = data.x();
    let spread: f64 = (0..x.dim())
        .map(|j| {
            let mean = x.rows().map(|r| r[j]).sum::<f64>() / n;
            x.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        .sqrt();
    let l = if spread > 0.0 { spread } else { 1.0 };
    Hyperparams {
        log_sigma: sigma.ln(),
        log_l: l.ln(),
        log_sigma_n: (0.1 * sigma).ln(),
    }
}
