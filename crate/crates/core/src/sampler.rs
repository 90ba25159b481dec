//! Hamiltonian Monte Carlo with a per-iteration random mass (QHMC) and the
//! fixed-mass baseline.
//!
//! Each iteration draws a scalar mass m with log m ~ N(µ_m, σ_m²), draws a
//! momentum q ~ N(0, mI), integrates Hamilton's equations with leapfrog and
//! applies a Metropolis-Hastings correction on H(x, q) = U(x) + qᵀq/(2m). The
//! same m enters the kinetic energy at both ends of a proposal.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, SeedRng};

/// A sampling target: potential U = −log density (up to a constant) and its
/// gradient. `potential` may return `+inf` for forbidden states; a gradient
/// with non-finite entries aborts the proposal.
pub trait Target {
    fn dim(&self) -> usize;
    fn potential(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Adapts a pair of closures to [`Target`].
pub struct FnTarget<U, G> {
    pub dim: usize,
    pub potential: U,
    pub gradient: G,
}

impl<U, G> Target for FnTarget<U, G>
where
    U: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&self, x: &[f64]) -> f64 {
        (self.potential)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QhmcConfig {
    /// Leapfrog step size.
    pub epsilon: f64,
    /// Leapfrog steps per proposal (L).
    pub steps: usize,
    /// Mean of log m.
    pub mu_m: f64,
    /// Standard deviation of log m; zero gives plain HMC with mass e^µ_m.
    pub sigma_m: f64,
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for QhmcConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            steps: 10,
            mu_m: 0.0,
            sigma_m: 1.0,
            n_samples: 2000,
            burn_in: 500,
            seed: 0,
        }
    }
}

impl QhmcConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.steps < 1 {
            return fail("steps (L) must be at least 1".into());
        }
        if !self.mu_m.is_finite() {
            return fail(format!("mu_m must be finite, got {}", self.mu_m));
        }
        if !(self.sigma_m >= 0.0 && self.sigma_m.is_finite()) {
            return fail(format!("sigma_m must be non-negative, got {}", self.sigma_m));
        }
        if self.n_samples < 1 {
            return fail("n_samples must be at least 1".into());
        }
        Ok(())
    }

    fn mass_law(&self) -> MassLaw {
        if self.sigma_m == 0.0 {
            MassLaw::Fixed(self.mu_m.exp())
        } else {
            MassLaw::LogNormal {
                mu: self.mu_m,
                sigma: self.sigma_m,
            }
        }
    }
}

/// Settings for the fixed-mass HMC baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub mass: f64,
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MassLaw {
    Fixed(f64),
    LogNormal { mu: f64, sigma: f64 },
}

impl MassLaw {
    fn draw(self, rng: &mut SeedRng) -> f64 {
        match self {
            MassLaw::Fixed(m) => m,
            MassLaw::LogNormal { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                (mu + sigma * z).exp()
            }
        }
    }
}

/// Draws m with log m ~ N(µ_m, σ_m²). With σ_m = 0 no randomness is consumed.
pub fn sample_mass(config: &QhmcConfig, rng: &mut SeedRng) -> f64 {
    config.mass_law().draw(rng)
}

/// q ~ N(0, m·I).
pub fn sample_momentum(dim: usize, mass: f64, rng: &mut SeedRng) -> Vec<f64> {
    let scale = mass.sqrt();
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn kinetic_energy(q: &[f64], mass: f64) -> f64 {
    0.5 * q.iter().map(|v| v * v).sum::<f64>() / mass
}

/// End state of one leapfrog trajectory and the gradient there.
struct Trajectory {
    x: Vec<f64>,
    q: Vec<f64>,
    grad: Vec<f64>,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn kick(q: &mut [f64], grad: &[f64], h: f64) {
    q.iter_mut().zip(grad).for_each(|(qi, gi)| *qi -= h * gi);
}

fn drift(x: &mut [f64], q: &[f64], h: f64) {
    x.iter_mut().zip(q).for_each(|(xi, qi)| *xi += h * qi);
}

fn integrate(
    x0: &[f64],
    q0: &[f64],
    grad0: &[f64],
    mass: f64,
    epsilon: f64,
    steps: usize,
    grad_u: &mut dyn FnMut(&[f64]) -> Vec<f64>,
) -> Option<Trajectory> {
    if !all_finite(grad0) {
        return None;
    }
    let mut x = x0.to_vec();
    let mut q = q0.to_vec();
    let velocity = epsilon / mass;
    kick(&mut q, grad0, 0.5 * epsilon);
    let mut grad = Vec::new();
    for step in 0..steps {
        drift(&mut x, &q, velocity);
        grad = grad_u(&x);
        if !all_finite(&grad) || !all_finite(&x) {
            return None;
        }
        let h = if step + 1 == steps { 0.5 * epsilon } else { epsilon };
        kick(&mut q, &grad, h);
    }
    all_finite(&q).then_some(Trajectory { x, q, grad })
}

/// Leapfrog integration with mass matrix mI: a half kick, L − 1 (drift, kick)
/// pairs, a final drift and a closing half kick. Returns `None` when a
/// non-finite gradient or state is met.
pub fn leapfrog<G>(
    x0: &[f64],
    q0: &[f64],
    mass: f64,
    epsilon: f64,
    steps: usize,
    mut grad_u: G,
) -> Option<(Vec<f64>, Vec<f64>)>
where
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let g0 = grad_u(x0);
    integrate(x0, q0, &g0, mass, epsilon, steps, &mut grad_u).map(|t| (t.x, t.q))
}

/// Metropolis-Hastings test: accepts with probability min(1, e^(H_cur − H_prop)).
/// A uniform variate is always drawn so the stream position does not depend on
/// the outcome.
pub fn mh_accept(h_current: f64, h_proposed: f64, rng: &mut SeedRng) -> bool {
    let u: f64 = rng.random();
    if h_proposed.is_nan() || h_proposed == f64::INFINITY {
        return false;
    }
    if h_current == f64::INFINITY || h_proposed <= h_current {
        return true;
    }
    u < (h_current - h_proposed).exp()
}

/// Post burn-in draws of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleChain {
    pub samples: Vec<Vec<f64>>,
    pub potentials: Vec<f64>,
    /// Acceptance flag of every iteration, burn-in included.
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
}

impl SampleChain {
    /// Sample with the lowest potential; ties go to the earliest.
    pub fn min_potential_sample(&self) -> &[f64] {
        let mut best = 0;
        for (i, u) in self.potentials.iter().enumerate() {
            if *u < self.potentials[best] {
                best = i;
            }
        }
        &self.samples[best]
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let dim = self.samples[0].len();
        (0..dim)
            .map(|j| self.samples.iter().map(|s| s[j]).sum::<f64>() / n)
            .collect()
    }

    /// Unbiased per-component variance.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        self.mean()
            .iter()
            .enumerate()
            .map(|(j, m)| self.samples.iter().map(|s| (s[j] - m).powi(2)).sum::<f64>() / (n - 1.0))
            .collect()
    }

    /// Effective sample size of one component, using Geyer's initial positive
    /// sequence on the empirical autocorrelations.
    pub fn effective_sample_size(&self, component: usize) -> f64 {
        let xs: Vec<f64> = self.samples.iter().map(|s| s[component]).collect();
        let n = xs.len();
        if n < 4 {
            return n as f64;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let c0 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        if c0 == 0.0 {
            return n as f64;
        }
        let rho = |lag: usize| {
            xs.iter()
                .zip(&xs[lag..])
                .map(|(a, b)| (a - mean) * (b - mean))
                .sum::<f64>()
                / (n as f64 * c0)
        };
        let mut tau = -1.0;
        let mut lag = 0;
        while lag + 1 < n {
            let pair = rho(lag) + rho(lag + 1);
            if pair <= 0.0 {
                break;
            }
            tau += 2.0 * pair;
            lag += 2;
        }
        n as f64 / tau.max(1.0 / n as f64)
    }
}

struct ChainSettings {
    epsilon: f64,
    steps: usize,
    n_samples: usize,
    burn_in: usize,
    seed: u64,
}

fn run(target: &dyn Target, init: &[f64], settings: &ChainSettings, law: MassLaw) -> Result<SampleChain> {
    if init.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: init.len(),
        });
    }
    if !all_finite(init) {
        return Err(Error::NonFinite("chain initial state"));
    }
    let mut rng = rng::from_seed(settings.seed);
    let mut grad_u = |x: &[f64]| target.gradient(x);

    let mut x = init.to_vec();
    let mut u_x = target.potential(&x);
    let mut g_x = target.gradient(&x);

    let total = settings.burn_in + settings.n_samples;
    let mut samples = Vec::with_capacity(settings.n_samples);
    let mut potentials = Vec::with_capacity(settings.n_samples);
    let mut accepted = Vec::with_capacity(total);

    for t in 0..total {
        let mass = law.draw(&mut rng);
        let q = sample_momentum(x.len(), mass, &mut rng);
        let h_current = u_x + kinetic_energy(&q, mass);
        let moved = match integrate(&x, &q, &g_x, mass, settings.epsilon, settings.steps, &mut grad_u) {
            Some(traj) => {
                let u_new = target.potential(&traj.x);
                let h_new = u_new + kinetic_energy(&traj.q, mass);
                if mh_accept(h_current, h_new, &mut rng) {
                    x = traj.x;
                    u_x = u_new;
                    g_x = traj.grad;
                    true
                } else {
                    false
                }
            }
            None => mh_accept(h_current, f64::INFINITY, &mut rng),
        };
        accepted.push(moved);
        if t >= settings.burn_in {
            samples.push(x.clone());
            potentials.push(u_x);
        }
    }

    let n_accepted = accepted.iter().filter(|a| **a).count();
    if n_accepted == 0 {
        return Err(Error::NoAcceptance {
            iterations: total,
            epsilon: settings.epsilon,
        });
    }
    Ok(SampleChain {
        samples,
        potentials,
        acceptance_rate: n_accepted as f64 / total as f64,
        accepted,
    })
}

/// Runs a QHMC chain from `init`. Deterministic given `config.seed`.
pub fn run_chain(target: &dyn Target, init: &[f64], config: &QhmcConfig) -> Result<SampleChain> {
    config.validate()?;
    let settings = ChainSettings {
        epsilon: config.epsilon,
        steps: config.steps,
        n_samples: config.n_samples,
        burn_in: config.burn_in,
        seed: config.seed,
    };
    run(target, init, &settings, config.mass_law())
}

/// Runs a standard HMC chain with a fixed scalar mass.
pub fn run_hmc(target: &dyn Target, init: &[f64], config: &HmcConfig) -> Result<SampleChain> {
    if !(config.mass > 0.0 && config.mass.is_finite()) {
        return Err(Error::InvalidConfig(format!("mass must be positive, got {}", config.mass)));
    }
    QhmcConfig {
        epsilon: config.epsilon,
        steps: config.steps,
        mu_m: config.mass.ln(),
        sigma_m: 0.0,
        n_samples: config.n_samples,
        burn_in: config.burn_in,
        seed: config.seed,
    }
    .validate()?;
    let settings = ChainSettings {
        epsilon: config.epsilon,
        steps: config.steps,
        n_samples: config.n_samples,
        burn_in: config.burn_in,
        seed: config.seed,
    };
    run(target, init, &settings, MassLaw::Fixed(config.mass))
}

/// ½‖x‖² in `dim` dimensions: a standard normal target.
pub fn gaussian_target(dim: usize) -> impl Target {
    FnTarget {
        dim,
        potential: |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
        gradient: |x: &[f64]| x.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic_energy(x: &[f64], q: &[f64], m: f64) -> f64 {
        0.5 * x[0] * x[0] + kinetic_energy(q, m)
    }

    #[test]
    fn degenerate_mass_law() {
        let mut rng = rng::from_seed(1);
        let mut cfg = QhmcConfig {
            sigma_m: 0.0,
            ..QhmcConfig::default()
        };
        for _ in 0..10 {
            assert_eq!(sample_mass(&cfg, &mut rng), 1.0);
        }
        cfg.mu_m = 2f64.ln();
        for _ in 0..10 {
            assert!((sample_mass(&cfg, &mut rng) - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn lognormal_mass_moments() {
        let cfg = QhmcConfig {
            mu_m: 0.0,
            sigma_m: 1.0,
            ..QhmcConfig::default()
        };
        let mut rng = rng::from_seed(2);
        let logs: Vec<f64> = (0..100_000).map(|_| sample_mass(&cfg, &mut rng).ln()).collect();
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let std = (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((std - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn free_particle() {
        let (x, q) = leapfrog(&[1.0, -2.0], &[0.5, 0.25], 1.0, 0.1, 7, |x: &[f64]| vec![0.0; x.len()]).unwrap();
        assert!((x[0] - (1.0 + 7.0 * 0.1 * 0.5)).abs() < 1e-14);
        assert!((x[1] - (-2.0 + 7.0 * 0.1 * 0.25)).abs() < 1e-14);
        assert_eq!(q, vec![0.5, 0.25]);
    }

    #[test]
    fn harmonic_energy_error() {
        let (x, q) = leapfrog(&[1.0], &[0.0], 1.0, 0.1, 10, |x: &[f64]| x.to_vec()).unwrap();
        let err = (harmonic_energy(&x, &q, 1.0) - 0.5).abs();
        assert!(err < 1e-3, "energy error {err}");
    }

    #[test]
    fn leapfrog_is_reversible() {
        let grad = |x: &[f64]| vec![4.0 * x[0] * (x[0] * x[0] - 1.0), x[1]];
        let x0 = [0.3, -0.7];
        let q0 = [1.1, 0.4];
        let (x1, q1) = leapfrog(&x0, &q0, 1.7, 0.05, 25, grad).unwrap();
        let back: Vec<f64> = q1.iter().map(|v| -v).collect();
        let (x2, q2) = leapfrog(&x1, &back, 1.7, 0.05, 25, grad).unwrap();
        for i in 0..2 {
            assert!((x2[i] - x0[i]).abs() < 1e-10);
            assert!((q2[i] + q0[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn leapfrog_aborts_on_non_finite_gradient() {
        let out = leapfrog(&[0.0], &[1.0], 1.0, 0.1, 5, |x: &[f64]| {
            if x[0] > 0.25 {
                vec![f64::NAN]
            } else {
                vec![0.0]
            }
        });
        assert!(out.is_none());
    }

    #[test]
    fn mh_rules() {
        let mut rng = rng::from_seed(3);
        for _ in 0..1000 {
            assert!(mh_accept(1.0, 0.5, &mut rng));
            assert!(mh_accept(1.0, 1.0, &mut rng));
            assert!(!mh_accept(1.0, f64::INFINITY, &mut rng));
            assert!(!mh_accept(f64::INFINITY, f64::INFINITY, &mut rng));
            assert!(mh_accept(f64::INFINITY, 3.0, &mut rng));
        }
        let accepted = (0..100_000).filter(|_| mh_accept(0.0, 1.0, &mut rng)).count() as f64;
        assert!((accepted / 1e5 - (-1.0f64).exp()).abs() < 0.01);
    }

    #[test]
    fn momentum_covariance() {
        let mut rng = rng::from_seed(4);
        let m = 2.5;
        let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_momentum(2, m, &mut rng)).collect();
        let n = draws.len() as f64;
        for a in 0..2 {
            for b in 0..2 {
                let c = draws.iter().map(|q| q[a] * q[b]).sum::<f64>() / n;
                let want = if a == b { m } else { 0.0 };
                assert!((c - want).abs() < 0.05 * m, "cov[{a}][{b}] = {c}");
            }
        }
    }

    #[test]
    fn chain_is_seeded() {
        let t = gaussian_target(2);
        let cfg = QhmcConfig {
            epsilon: 0.2,
            n_samples: 300,
            burn_in: 50,
            sigma_m: 0.5,
            seed: 17,
            ..QhmcConfig::default()
        };
        let a = run_chain(&t, &[1.0, 1.0], &cfg).unwrap();
        let b = run_chain(&t, &[1.0, 1.0], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 300);
        assert_eq!(a.potentials.len(), 300);
        assert_eq!(a.accepted.len(), 350);
        let c = run_chain(&t, &[1.0, 1.0], &QhmcConfig { seed: 18, ..cfg }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn zero_sigma_matches_fixed_mass_hmc() {
        let t = gaussian_target(3);
        let cfg = QhmcConfig {
            epsilon: 0.1,
            sigma_m: 0.0,
            mu_m: 0.0,
            n_samples: 500,
            burn_in: 100,
            seed: 99,
            ..QhmcConfig::default()
        };
        let q = run_chain(&t, &[0.5, 0.5, 0.5], &cfg).unwrap();
        let h = run_hmc(
            &t,
            &[0.5, 0.5, 0.5],
            &HmcConfig {
                epsilon: 0.1,
                steps: 10,
                mass: 1.0,
                n_samples: 500,
                burn_in: 100,
                seed: 99,
            },
        )
        .unwrap();
        assert_eq!(q, h);
    }

    #[test]
    fn double_well_balance() {
        let t = FnTarget {
            dim: 1,
            potential: |x: &[f64]| (x[0] * x[0] - 1.0).powi(2),
            gradient: |x: &[f64]| vec![4.0 * x[0] * (x[0] * x[0] - 1.0)],
        };
        let cfg = QhmcConfig {
            epsilon: 0.1,
            steps: 10,
            mu_m: 0.0,
            sigma_m: 1.0,
            n_samples: 100_000,
            burn_in: 1000,
            seed: 5,
        };
        let chain = run_chain(&t, &[1.0], &cfg).unwrap();
        let right = chain.samples.iter().filter(|s| s[0] > 0.0).count() as f64 / 1e5;
        assert!((0.4..=0.6).contains(&right), "right-well fraction {right}");
        assert!(chain.samples.iter().all(|s| s[0].is_finite()));
    }

    #[test]
    fn gaussian_acceptance_rate() {
        let cfg = QhmcConfig {
            epsilon: 0.1,
            steps: 10,
            sigma_m: 0.5,
            n_samples: 5000,
            burn_in: 500,
            seed: 6,
            ..QhmcConfig::default()
        };
        let chain = run_chain(&gaussian_target(3), &[0.0; 3], &cfg).unwrap();
        assert!((0.6..=1.0).contains(&chain.acceptance_rate));
        let ess = chain.effective_sample_size(0);
        assert!(ess > 500.0 && ess < 3.0 * 5000.0, "ess {ess}");
    }

    #[test]
    fn no_acceptance_is_an_error() {
        let t = FnTarget {
            dim: 1,
            potential: |_: &[f64]| f64::INFINITY,
            gradient: |_: &[f64]| vec![0.0],
        };
        let cfg = QhmcConfig {
            n_samples: 20,
            burn_in: 0,
            ..QhmcConfig::default()
        };
        assert!(matches!(run_chain(&t, &[0.0], &cfg), Err(Error::NoAcceptance { iterations: 20, .. })));
    }

    #[test]
    fn config_validation() {
        let bad = [
            QhmcConfig { epsilon: 0.0, ..QhmcConfig::default() },
            QhmcConfig { steps: 0, ..QhmcConfig::default() },
            QhmcConfig { sigma_m: -1.0, ..QhmcConfig::default() },
            QhmcConfig { n_samples: 0, ..QhmcConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert!(QhmcConfig::default().validate().is_ok());
    }

    #[test]
    fn min_potential_sample_picks_earliest_minimum() {
        let chain = SampleChain {
            samples: vec![vec![0.0], vec![1.0], vec![2.0]],
            potentials: vec![3.0, 1.0, 1.0],
            accepted: vec![true; 3],
            acceptance_rate: 1.0,
        };
        assert_eq!(chain.min_potential_sample(), &[1.0]);
    }
}
