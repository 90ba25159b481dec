//! Built-in correctness checks: sampler moments, gradient and kernel
//! derivative finite-difference agreement, and leapfrog reversibility.

use qhmc_gp::constraints::{penalized_gradient, penalized_potential};
use qhmc_gp::kernels::{se_kernel, se_kernel_dxdxp, se_kernel_dxp};
use qhmc_gp::rng::{self, SeedRng};
use qhmc_gp::sampler::{gaussian_target, leapfrog, FnTarget};
use qhmc_gp::{
    gp, run_chain, ConstraintKind, ConstraintSet, Dataset, Enforcement, Hyperparams, Points, QhmcConfig, Target,
};
use rand::Rng;

/// A deliberate defect, for checking that the suite notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flips the sign of one component of the analytic NLL gradient.
    Gradient,
    /// Scales the analytic kernel derivative by 1.01.
    KernelDerivative,
    /// Samples ½‖x − 0.3‖² instead of the standard normal.
    SamplerTarget,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gradient" => Ok(Fault::Gradient),
            "kernel-derivative" => Ok(Fault::KernelDerivative),
            "sampler-target" => Ok(Fault::SamplerTarget),
            other => Err(format!("unknown fault `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// A seeded random regression instance: `n` points in [0, 1]^`dim` with
/// smooth targets, plus hyperparameters drawn around sensible values.
pub fn random_instance(rng: &mut SeedRng, n: usize, dim: usize) -> (Dataset, Hyperparams) {
    let data: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    let x = Points::new(data, dim).expect("valid points");
    let y = x
        .rows()
        .map(|r| r.iter().enumerate().map(|(j, v)| ((j + 2) as f64 * v).sin()).sum::<f64>() + 0.05 * rng.random::<f64>())
        .collect();
    let hyper = Hyperparams::from_log([
        rng.random_range(-0.5..0.5),
        rng.random_range(-1.5..0.0),
        rng.random_range(-4.0..-2.0),
    ])
    .expect("finite");
    (Dataset::new(x, y).expect("distinct points"), hyper)
}

fn nll_gradient(fault: Option<Fault>) -> CheckResult {
    let mut rng = rng::from_seed(101);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (data, hyper) = random_instance(&mut rng, 15, 2);
        let mut g = gp::nll_grad(&hyper, &data).expect("fit");
        if fault == Some(Fault::Gradient) {
            g[1] = -g[1];
        }
        let fd = central_diff(
            |t| gp::nll(&Hyperparams::from_log([t[0], t[1], t[2]]).unwrap(), &data).unwrap(),
            &hyper.to_log(),
            1e-5,
        );
        worst = worst.max(rel_err(&g, &fd));
    }
    check("nll_gradient", worst < 1e-5, format!("max relative error {worst:.2e} (limit 1e-5)"))
}

fn penalized_grad_check() -> CheckResult {
    let mut rng = rng::from_seed(202);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (data, hyper) = random_instance(&mut rng, 15, 2);
        let mut cset = ConstraintSet::new(
            2,
            ConstraintKind::LowerBound {
                bound: data.y_mean() + 0.3,
            },
            Enforcement::Soft,
        );
        for _ in 0..4 {
            cset.points.push(&[rng.random(), rng.random()]).unwrap();
        }
        let g = penalized_gradient(&hyper, &data, &cset).expect("gradient");
        let fd = central_diff(
            |t| penalized_potential(&Hyperparams::from_log([t[0], t[1], t[2]]).unwrap(), &data, &cset).unwrap(),
            &hyper.to_log(),
            1e-5,
        );
        worst = worst.max(rel_err(&g, &fd));
    }
    check(
        "penalized_gradient",
        worst < 1e-3,
        format!("max relative error {worst:.2e} (limit 1e-3)"),
    )
}

fn kernel_derivatives(fault: Option<Fault>) -> CheckResult {
    let mut rng = rng::from_seed(303);
    let mut worst_dxp: f64 = 0.0;
    let mut worst_dxdxp: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..50 {
        let hyper = Hyperparams::from_linear(rng.random_range(0.5..2.0), rng.random_range(0.3..1.5), 0.0).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xp: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let i = rng.random_range(0..3);
        let scale = if fault == Some(Fault::KernelDerivative) { 1.01 } else { 1.0 };
        let dxp = scale * se_kernel_dxp(&x, &xp, &hyper, i).unwrap();
        let k_at = |a: &[f64], b: &[f64]| se_kernel(a, b, &hyper, false).unwrap();
        let shifted = |v: &[f64], d: f64| {
            let mut w = v.to_vec();
            w[i] += d;
            w
        };
        let fd = (k_at(&x, &shifted(&xp, h)) - k_at(&x, &shifted(&xp, -h))) / (2.0 * h);
        let floor = 1e-3 * hyper.signal_variance();
        worst_dxp = worst_dxp.max((dxp - fd).abs() / fd.abs().max(floor));

        let dxdxp = scale * se_kernel_dxdxp(&x, &xp, &hyper, i).unwrap();
        let hh = 1e-4;
        let fd2 = (k_at(&shifted(&x, hh), &shifted(&xp, hh)) - k_at(&shifted(&x, hh), &shifted(&xp, -hh))
            - k_at(&shifted(&x, -hh), &shifted(&xp, hh))
            + k_at(&shifted(&x, -hh), &shifted(&xp, -hh)))
            / (4.0 * hh * hh);
        worst_dxdxp = worst_dxdxp.max((dxdxp - fd2).abs() / fd2.abs().max(floor));
    }
    check(
        "kernel_derivatives",
        worst_dxp < 1e-6 && worst_dxdxp < 1e-4,
        format!("dxp {worst_dxp:.2e} (limit 1e-6), dxdxp {worst_dxdxp:.2e} (limit 1e-4)"),
    )
}

fn leapfrog_reversibility() -> CheckResult {
    let grad = |x: &[f64]| x.iter().map(|v| v * v * v - v).collect::<Vec<_>>();
    let x0 = [0.3, -1.2, 0.8];
    let q0 = [0.5, 0.1, -0.7];
    let (x1, q1) = leapfrog(&x0, &q0, 1.3, 0.05, 25, grad).expect("finite trajectory");
    let back: Vec<f64> = q1.iter().map(|q| -q).collect();
    let (x2, q2) = leapfrog(&x1, &back, 1.3, 0.05, 25, grad).expect("finite trajectory");
    let dx = x2.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let dq = q2.iter().zip(&q0).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
    let err = dx.max(dq);
    check("leapfrog_reversibility", err < 1e-10, format!("round-trip error {err:.2e} (limit 1e-10)"))
}

fn gaussian_moments(fault: Option<Fault>) -> CheckResult {
    let config = QhmcConfig {
        epsilon: 0.1,
        steps: 10,
        mu_m: 0.0,
        sigma_m: 0.5,
        n_samples: 20_000,
        burn_in: 1_000,
        seed: 404,
    };
    let shifted = FnTarget {
        dim: 3,
        potential: |x: &[f64]| 0.5 * x.iter().map(|v| (v - 0.3).powi(2)).sum::<f64>(),
        gradient: |x: &[f64]| x.iter().map(|v| v - 0.3).collect(),
    };
    let standard = gaussian_target(3);
    let target: &dyn Target = if fault == Some(Fault::SamplerTarget) {
        &shifted
    } else {
        &standard
    };
    let chain = match run_chain(target, &[0.0; 3], &config) {
        Ok(c) => c,
        Err(e) => return check("gaussian_moments", false, e.to_string()),
    };
    let mean = chain.mean();
    let var = chain.variance();
    let ok = mean.iter().all(|m| m.abs() <= 0.05) && var.iter().all(|v| (0.9..=1.1).contains(v));
    check(
        "gaussian_moments",
        ok,
        format!("mean {mean:.3?} (limit ±0.05), variance {var:.3?} (limit [0.9, 1.1])"),
    )
}

/// Runs every check, in a fixed order.
pub fn run_selftest(fault: Option<Fault>) -> Vec<CheckResult> {
    vec![
        gaussian_moments(fault),
        nll_gradient(fault),
        penalized_grad_check(),
        leapfrog_reversibility(),
        kernel_derivatives(fault),
    ]
}
