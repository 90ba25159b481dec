use proptest::prelude::*;

use qhmc_gp::adaptive::{latin_hypercube, score_candidates};
use qhmc_gp::constraints::{margin, penalized_potential, violation_probability};
use qhmc_gp::rng;
use qhmc_gp::sampler::{gaussian_target, sample_mass};
use qhmc_gp::{
    adaptive_train, gp, run_chain, AdaptiveConfig, ConstraintKind, ConstraintSet, Dataset, Enforcement, Hyperparams,
    Points, QhmcConfig, Strategy as Placement, TestSet,
};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

/// Distinct, well-separated 1D inputs with smooth targets.
fn dataset_1d() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..10, any::<u64>()).prop_map(|(n, seed)| {
        use rand::Rng;
        let mut r = rng::from_seed(seed);
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 + 0.05 * r.random::<f64>() / n as f64).collect();
        let y = x.iter().map(|v| (3.0 * v).sin() + 0.1 * r.random::<f64>()).collect();
        (x, y)
    })
}

fn hyper() -> impl Strategy<Value = Hyperparams> {
    (-0.7..0.7f64, -1.5..0.0f64, -4.0..-1.5f64).prop_map(|(a, b, c)| Hyperparams::from_log([a, b, c]).unwrap())
}

fn points_1d(x: &[f64]) -> Points {
    Points::new(x.to_vec(), 1).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn adding_a_training_point_never_raises_variance((x, y) in dataset_1d(), h in hyper()) {
        let query = points_1d(&(0..41).map(|i| -0.5 + i as f64 / 20.0).collect::<Vec<_>>());
        let n = x.len();
        let small = Dataset::new(points_1d(&x[..n - 1]), y[..n - 1].to_vec()).unwrap();
        let full = Dataset::new(points_1d(&x), y.clone()).unwrap();
        let before = gp::posterior(&h, &small, &query).unwrap();
        let after = gp::posterior(&h, &full, &query).unwrap();
        for (a, b) in after.variance().zip(before.variance()) {
            prop_assert!(a <= b + 1e-8, "{a} > {b}");
        }
    }

    #[test]
    fn posterior_mean_is_linear_in_y(
        (x, y1) in dataset_1d(),
        alpha in -3.0..3.0f64,
        beta in -3.0..3.0f64,
        h in hyper(),
    ) {
        let y2: Vec<f64> = x.iter().map(|v| v * v - 0.3).collect();
        let mixed: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| alpha * a + beta * b).collect();
        let q = points_1d(&[0.13, 0.5, 0.91, 1.7]);
        let mean = |y: Vec<f64>| gp::posterior(&h, &Dataset::uncentered(points_1d(&x), y).unwrap(), &q).unwrap().mean;
        let (m1, m2, m) = (mean(y1.clone()), mean(y2), mean(mixed));
        for i in 0..4 {
            prop_assert!((m[i] - (alpha * m1[i] + beta * m2[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn nll_approaches_iid_limit_for_large_noise((x, y) in dataset_1d(), h in hyper()) {
        let s = h.sigma();
        let noisy = Hyperparams::from_linear(s, h.length_scale(), 1e3 * s).unwrap();
        let data = Dataset::uncentered(points_1d(&x), y.clone()).unwrap();
        let sn = noisy.noise_std();
        let n = y.len() as f64;
        let iid = 0.5 * y.iter().map(|v| (v / sn).powi(2)).sum::<f64>()
            + n * sn.ln()
            + 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        let got = gp::nll(&noisy, &data).unwrap();
        prop_assert!((got - iid).abs() <= 0.01 * iid.abs());
    }

    #[test]
    fn nll_ignores_row_order((x, y) in dataset_1d(), h in hyper(), shift in 1usize..10) {
        let n = x.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
        let mut seen = perm.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assume!(seen.len() == n);
        let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let a = gp::nll(&h, &Dataset::new(points_1d(&x), y).unwrap()).unwrap();
        let b = gp::nll(&h, &Dataset::new(points_1d(&px), py).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn nll_gradient_is_scale_invariant((x, y) in dataset_1d(), h in hyper()) {
        let data = Dataset::new(points_1d(&x), y.clone()).unwrap();
        let doubled = Dataset::new(points_1d(&x), y.iter().map(|v| 2.0 * v).collect()).unwrap();
        let scaled = Hyperparams::from_linear(2.0 * h.sigma(), h.length_scale(), 2.0 * h.noise_std()).unwrap();
        let g = gp::nll_grad(&h, &data).unwrap();
        let gs = gp::nll_grad(&scaled, &doubled).unwrap();
        for k in 0..3 {
            prop_assert!((g[k] - gs[k]).abs() <= 1e-8 * g[k].abs().max(1.0), "{k}: {} vs {}", g[k], gs[k]);
        }
    }

    #[test]
    fn margin_sign_matches_violation_budget((x, y) in dataset_1d(), h in hyper(), b in -1.5..1.5f64) {
        let data = Dataset::new(points_1d(&x), y).unwrap();
        let mut c = ConstraintSet::new(1, ConstraintKind::LowerBound { bound: b }, Enforcement::Soft);
        for v in [-0.2, 0.33, 0.7, 1.4] {
            c.points.push(&[v]).unwrap();
        }
        let report = margin(&h, &data, &c).unwrap();
        let post = gp::posterior(&h, &data, &c.points).unwrap();
        for i in 0..4 {
            prop_assume!(post.std[i] > 1e-6);
            let p = violation_probability(post.mean[i], post.std[i], b).unwrap();
            if report.margins[i].abs() > 1e-6 {
                prop_assert_eq!(report.margins[i] >= 0.0, p <= c.eta);
            }
        }
        prop_assert_eq!(
            report.violations.clone(),
            (0..4).filter(|&i| report.margins[i] < 0.0).collect::<Vec<_>>()
        );
    }

    #[test]
    fn soft_potential_is_continuous((x, y) in dataset_1d(), h in hyper(), k in 0usize..3) {
        let data = Dataset::new(points_1d(&x), y).unwrap();
        let mut c = ConstraintSet::new(1, ConstraintKind::LowerBound { bound: 0.2 }, Enforcement::Soft);
        for v in [0.1, 0.45, 0.8] {
            c.points.push(&[v]).unwrap();
        }
        let mut t = h.to_log();
        let u0 = penalized_potential(&h, &data, &c).unwrap();
        t[k] += 1e-8;
        let u1 = penalized_potential(&Hyperparams::from_log(t).unwrap(), &data, &c).unwrap();
        prop_assert!((u1 - u0).abs() < 1e-4);
    }

    #[test]
    fn hard_equals_soft_when_feasible((x, y) in dataset_1d(), h in hyper(), weight in 0.0..1e4f64) {
        let data = Dataset::new(points_1d(&x), y).unwrap();
        let mut soft = ConstraintSet::new(1, ConstraintKind::LowerBound { bound: -50.0 }, Enforcement::Soft);
        soft.penalty_weight = weight;
        for v in [0.0, 0.5, 1.0] {
            soft.points.push(&[v]).unwrap();
        }
        let mut hard = soft.clone();
        hard.mode = Enforcement::Hard;
        prop_assert_eq!(
            penalized_potential(&h, &data, &soft).unwrap(),
            penalized_potential(&h, &data, &hard).unwrap()
        );
        hard.kind = ConstraintKind::LowerBound { bound: 50.0 };
        prop_assert_eq!(penalized_potential(&h, &data, &hard).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mass_is_positive_and_finite(mu in -3.0..3.0f64, sigma in 0.0..3.0f64, seed in any::<u64>()) {
        let cfg = QhmcConfig { mu_m: mu, sigma_m: sigma, ..QhmcConfig::default() };
        let mut r = rng::from_seed(seed);
        for _ in 0..100 {
            let m = sample_mass(&cfg, &mut r);
            prop_assert!(m.is_finite() && m > 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn chains_stay_finite_and_sized(seed in any::<u64>(), sigma_m in 0.0..2.0f64, n in 1usize..300) {
        let cfg = QhmcConfig {
            epsilon: 0.1,
            steps: 10,
            sigma_m,
            n_samples: n,
            burn_in: 20,
            seed,
            ..QhmcConfig::default()
        };
        let chain = run_chain(&gaussian_target(2), &[0.5, -0.5], &cfg).unwrap();
        prop_assert_eq!(chain.samples.len(), n);
        prop_assert_eq!(chain.potentials.len(), n);
        prop_assert!((0.0..=1.0).contains(&chain.acceptance_rate));
        prop_assert!(chain.samples.iter().flatten().all(|v| v.is_finite()));
    }
}

fn small_problem(seed: u64) -> (Dataset, TestSet, AdaptiveConfig) {
    use qhmc_gp::bench::target;
    use qhmc_gp::BenchFunction;
    let f = BenchFunction::Arctan2d;
    let mut r = rng::from_seed(seed);
    let x = latin_hypercube(15, &f.domain(), &mut r).unwrap();
    let y = target(f, &x).unwrap();
    let tx = latin_hypercube(200, &f.domain(), &mut r).unwrap();
    let truth = target(f, &tx).unwrap();
    let adaptive = AdaptiveConfig::with_lhs(Placement::VarianceAdaptive, 5, &f.domain(), 40, seed).unwrap();
    (Dataset::new(x, y).unwrap(), TestSet { x: tx, truth }, adaptive)
}

fn short_chain(seed: u64) -> QhmcConfig {
    QhmcConfig {
        n_samples: 60,
        burn_in: 20,
        seed,
        ..QhmcConfig::default()
    }
}

#[test]
fn variance_strategy_takes_the_running_maximum() {
    let (data, test, adaptive) = small_problem(3);
    let template = ConstraintSet::new(2, ConstraintKind::LowerBound { bound: 0.0 }, Enforcement::Soft);
    let out = adaptive_train(&data, &short_chain(3), &template, &adaptive, &test).unwrap();
    let records = &out.trace.records;
    assert_eq!(records.len(), 6);

    let mut cset = template.clone();
    let mut taken = vec![false; adaptive.candidates.len()];
    for (k, rec) in records.iter().enumerate() {
        assert_eq!(rec.step, k);
        assert_eq!(rec.n_constraints, k);
        let Some(sel) = rec.selection else {
            assert_eq!(k, 5);
            break;
        };
        let model = qhmc_gp::GpModel::fit(rec.hyper, &data).unwrap();
        let scores = score_candidates(&model, &cset, &adaptive.candidates).unwrap();
        let best = (0..taken.len())
            .filter(|&i| !taken[i])
            .map(|i| scores.variances[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(sel.score, best);
        assert!(!taken[sel.index]);
        assert_eq!(rec.location.as_deref(), Some(adaptive.candidates.row(sel.index)));
        taken[sel.index] = true;
        cset.points.push(adaptive.candidates.row(sel.index)).unwrap();
    }
    assert_eq!(out.constraints.points, cset.points);
}

#[test]
fn adaptive_training_is_reproducible() {
    let (data, test, mut adaptive) = small_problem(11);
    adaptive.strategy = Placement::Combined;
    adaptive.variance_threshold = 1e-3;
    let template = ConstraintSet::new(2, ConstraintKind::LowerBound { bound: 0.0 }, Enforcement::Soft);
    let a = adaptive_train(&data, &short_chain(5), &template, &adaptive, &test).unwrap();
    let b = adaptive_train(&data, &short_chain(5), &template, &adaptive, &test).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.constraints.points, b.constraints.points);
}

#[test]
fn gradient_vanishes_at_a_grid_minimum() {
    let (data, _, _) = small_problem(21);
    let log_noise = -3.0;
    let nll = |a: f64, b: f64| gp::nll(&Hyperparams::from_log([a, b, log_noise]).unwrap(), &data).unwrap();
    let (mut ca, mut cb, mut half) = (0.0, 0.0, 2.0);
    // Successively finer 41 × 41 grids centred on the previous best point.
    for _ in 0..6 {
        let mut best = (f64::INFINITY, ca, cb);
        for i in 0..=40 {
            for j in 0..=40 {
                let a = ca - half + 2.0 * half * i as f64 / 40.0;
                let b = cb - half + 2.0 * half * j as f64 / 40.0;
                let v = nll(a, b);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        (ca, cb) = (best.1, best.2);
        half /= 8.0;
    }
    let g = gp::nll_grad(&Hyperparams::from_log([ca, cb, log_noise]).unwrap(), &data).unwrap();
    assert!(g[0].abs() < 1e-2 && g[1].abs() < 1e-2, "{g:?} at ({ca}, {cb})");
}
