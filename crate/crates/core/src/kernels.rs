//! Squared-exponential kernel, its derivative forms, covariance assembly and
//! jittered Cholesky factorization.

use faer::linalg::solvers::{DenseSolveCore, Llt};
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Mat, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};
use crate::points::{squared_distance, Points};

/// GP hyperparameters θ = (σ, l, σ_n), held in log space.
///
/// `log_sigma_n = -inf` encodes the noise-free model σ_n = 0; every other
/// component must be finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub log_sigma: f64,
    pub log_l: f64,
    pub log_sigma_n: f64,
}

impl Hyperparams {
    pub fn from_log(log: [f64; 3]) -> Result<Self> {
        let h = Self {
            log_sigma: log[0],
            log_l: log[1],
            log_sigma_n: log[2],
        };
        h.validate()?;
        Ok(h)
    }

    pub fn from_linear(sigma: f64, l: f64, sigma_n: f64) -> Result<Self> {
        if !(sigma > 0.0 && l > 0.0 && sigma_n >= 0.0) {
            return Err(Error::InvalidHyperparams(format!(
                "need sigma > 0, l > 0, sigma_n >= 0 (got {sigma}, {l}, {sigma_n})"
            )));
        }
        Self::from_log([sigma.ln(), l.ln(), sigma_n.ln()])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.log_sigma.is_finite()
            && self.log_l.is_finite()
            && (self.log_sigma_n.is_finite() || self.log_sigma_n == f64::NEG_INFINITY)
            && self.sigma().is_finite()
            && self.sigma() > 0.0
            && self.length_scale().is_finite()
            && self.length_scale() > 0.0
            && self.noise_std().is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidHyperparams(format!("{self:?}")))
        }
    }

    pub fn to_log(&self) -> [f64; 3] {
        [self.log_sigma, self.log_l, self.log_sigma_n]
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn length_scale(&self) -> f64 {
        self.log_l.exp()
    }

    pub fn noise_std(&self) -> f64 {
        self.log_sigma_n.exp()
    }

    pub fn signal_variance(&self) -> f64 {
        (2.0 * self.log_sigma).exp()
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_sigma_n).exp()
    }
}

fn check_pair(x: &[f64], x_prime: &[f64]) -> Result<()> {
    if x.len() != x_prime.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: x_prime.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Empty("kernel input"));
    }
    if x.iter().chain(x_prime).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel input"));
    }
    Ok(())
}

fn check_index(i: usize, d: usize) -> Result<()> {
    if i >= d {
        Err(Error::IndexOutOfRange { index: i, dim: d })
    } else {
        Ok(())
    }
}

/// Noise-free SE covariance from a squared distance.
#[inline]
pub(crate) fn se_from_sq(sq: f64, hyper: &Hyperparams) -> f64 {
    let l2 = (2.0 * hyper.log_l).exp();
    hyper.signal_variance() * (-0.5 * sq / l2).exp()
}

/// σ²·exp(−‖x−x′‖²/2l²), plus σ_n² when `include_noise` is set.
///
/// `include_noise` states that `x` and `x_prime` are the same observation
/// (identical index in the training set); the noise term is never inferred
/// from value equality.
pub fn se_kernel(x: &[f64], x_prime: &[f64], hyper: &Hyperparams, include_noise: bool) -> Result<f64> {
    check_pair(x, x_prime)?;
    let k = se_from_sq(squared_distance(x, x_prime), hyper);
    Ok(if include_noise {
        k + hyper.noise_variance()
    } else {
        k
    })
}

/// ∂k(x, x′)/∂x′_i for the noise-free kernel: the covariance between f(x) and
/// ∂f/∂x_i at x′.
pub fn se_kernel_dxp(x: &[f64], x_prime: &[f64], hyper: &Hyperparams, i: usize) -> Result<f64> {
    check_pair(x, x_prime)?;
    check_index(i, x.len())?;
    Ok(dxp_unchecked(x, x_prime, hyper, i))
}

#[inline]
pub(crate) fn dxp_unchecked(x: &[f64], x_prime: &[f64], hyper: &Hyperparams, i: usize) -> f64 {
    let l2 = (2.0 * hyper.log_l).exp();
    se_from_sq(squared_distance(x, x_prime), hyper) * (x[i] - x_prime[i]) / l2
}

/// ∂²k(x, x′)/∂x_i∂x′_i: the covariance of ∂f/∂x_i at x and at x′.
pub fn se_kernel_dxdxp(x: &[f64], x_prime: &[f64], hyper: &Hyperparams, i: usize) -> Result<f64> {
    check_pair(x, x_prime)?;
    check_index(i, x.len())?;
    let l2 = (2.0 * hyper.log_l).exp();
    let diff = x[i] - x_prime[i];
    Ok(se_from_sq(squared_distance(x, x_prime), hyper) * (1.0 / l2 - diff * diff / (l2 * l2)))
}

/// A dense covariance matrix and the diagonal jitter its factorization needed.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    pub entries: Mat<f64>,
    pub jitter_applied: f64,
}

impl CovMatrix {
    /// Factorizes through the jitter ladder and records the jitter used.
    pub fn cholesky(&mut self) -> Result<Cholesky> {
        let chol = cholesky_with_jitter(self.entries.as_ref())?;
        self.jitter_applied = chol.jitter();
        Ok(chol)
    }
}

/// Cross-covariance between two point sets; never carries a noise term.
pub fn cov_matrix(x: &Points, x_prime: &Points, hyper: &Hyperparams) -> Result<CovMatrix> {
    if x.is_empty() || x_prime.is_empty() {
        return Err(Error::Empty("covariance input"));
    }
    if x.dim() != x_prime.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: x_prime.dim(),
        });
    }
    let entries = Mat::from_fn(x.len(), x_prime.len(), |a, b| {
        se_from_sq(squared_distance(x.row(a), x_prime.row(b)), hyper)
    });
    Ok(CovMatrix {
        entries,
        jitter_applied: 0.0,
    })
}

/// Covariance of a point set with itself; σ_n² goes on the diagonal when
/// `include_noise` is set.
pub fn train_cov_matrix(x: &Points, hyper: &Hyperparams, include_noise: bool) -> Result<CovMatrix> {
    if x.is_empty() {
        return Err(Error::Empty("covariance input"));
    }
    let n = x.len();
    let sq = Mat::from_fn(n, n, |a, b| squared_distance(x.row(a), x.row(b)));
    Ok(train_cov_from_sq(sq.as_ref(), hyper, include_noise))
}

/// [`train_cov_matrix`] from precomputed pairwise squared distances.
pub(crate) fn train_cov_from_sq(sq: MatRef<'_, f64>, hyper: &Hyperparams, include_noise: bool) -> CovMatrix {
    let n = sq.nrows();
    let mut entries = Mat::zeros(n, n);
    let diag = hyper.signal_variance() + if include_noise { hyper.noise_variance() } else { 0.0 };
    for b in 0..n {
        entries[(b, b)] = diag;
        for a in b + 1..n {
            let k = se_from_sq(sq[(a, b)], hyper);
            entries[(a, b)] = k;
            entries[(b, a)] = k;
        }
    }
    CovMatrix {
        entries,
        jitter_applied: 0.0,
    }
}

/// Multipliers of mean(diag(A)) tried in order.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// Lower Cholesky factor of `A + jI`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    llt: Llt<f64>,
    jitter: f64,
}

/// Factorizes `a`, escalating the diagonal jitter through [`JITTER_LADDER`].
pub fn cholesky_with_jitter(a: MatRef<'_, f64>) -> Result<Cholesky> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidData(format!(
            "Cholesky needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut trace = 0.0;
    for j in 0..n {
        for i in j..n {
            if !a[(i, j)].is_finite() {
                return Err(Error::NonFinite("covariance matrix"));
            }
        }
        trace += a[(j, j)];
    }
    let scale = (trace / n as f64).abs();
    let mut jitter = 0.0;
    for level in JITTER_LADDER {
        jitter = level * scale;
        let attempt = if jitter == 0.0 {
            a.llt(Side::Lower)
        } else {
            let mut shifted = a.to_owned();
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            shifted.llt(Side::Lower)
        };
        if let Ok(llt) = attempt {
            if (0..n).all(|i| llt.L()[(i, i)] > 0.0 && llt.L()[(i, i)].is_finite()) {
                return Ok(Cholesky { llt, jitter });
            }
        }
    }
    Err(Error::IllConditioned { jitter })
}

impl Cholesky {
    pub fn lower(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    /// Overwrites `rhs` with L⁻¹·rhs.
    pub fn solve_lower_in_place(&self, rhs: MatMut<'_, f64>) {
        solve_lower_triangular_in_place(self.llt.L(), rhs, Par::Seq);
    }

    /// Overwrites `rhs` with L⁻ᵀ·rhs.
    pub fn solve_upper_in_place(&self, rhs: MatMut<'_, f64>) {
        solve_upper_triangular_in_place(self.llt.L().transpose(), rhs, Par::Seq);
    }

    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut m = column(b);
        self.solve_lower_in_place(m.as_mut());
        m.col_as_slice(0).to_vec()
    }

    /// A⁻¹·b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut m = column(b);
        self.solve_lower_in_place(m.as_mut());
        self.solve_upper_in_place(m.as_mut());
        m.col_as_slice(0).to_vec()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Mat<f64> {
        self.llt.inverse()
    }
}

fn column(b: &[f64]) -> Mat<f64> {
    Mat::from_fn(b.len(), 1, |i, _| b[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit(sigma_n: f64) -> Hyperparams {
        Hyperparams::from_linear(1.0, 1.0, sigma_n).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let h = unit(0.0);
        assert_eq!(se_kernel(&[0.3, 0.1], &[0.3, 0.1], &h, true).unwrap(), 1.0);
        let v = se_kernel(&[0.0], &[2f64.sqrt()], &h, false).unwrap();
        assert_relative_eq!(v, (-1.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(v, 0.367_879, epsilon = 1e-6);
        let noisy = unit(0.1);
        assert_relative_eq!(se_kernel(&[0.5], &[0.5], &noisy, true).unwrap(), 1.01, epsilon = 1e-14);
        // Coincident values without the index flag get no noise.
        assert_eq!(se_kernel(&[0.5], &[0.5], &noisy, false).unwrap(), 1.0);
    }

    #[test]
    fn kernel_errors() {
        let h = unit(0.0);
        assert!(matches!(
            se_kernel(&[0.0], &[0.0, 1.0], &h, false),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            se_kernel(&[f64::NAN], &[0.0], &h, false),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            se_kernel_dxp(&[0.0], &[0.0], &h, 1),
            Err(Error::IndexOutOfRange { index: 1, dim: 1 })
        ));
        assert!(se_kernel_dxdxp(&[0.0, 1.0], &[0.0, 1.0], &h, 2).is_err());
    }

    #[test]
    fn derivative_examples() {
        let h = unit(0.0);
        assert_eq!(se_kernel_dxp(&[0.4], &[0.4], &h, 0).unwrap(), 0.0);
        let v = se_kernel_dxp(&[1.0], &[0.0], &h, 0).unwrap();
        assert_relative_eq!(v, (-0.5f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(v, 0.606_531, epsilon = 1e-6);
        let swapped = se_kernel_dxp(&[0.0], &[1.0], &h, 0).unwrap();
        assert_eq!(swapped, -v);

        let short = Hyperparams::from_linear(1.0, 0.5, 0.0).unwrap();
        assert_relative_eq!(se_kernel_dxdxp(&[0.2], &[0.2], &short, 0).unwrap(), 4.0, max_relative = 1e-14);
        assert!(se_kernel_dxdxp(&[1.0], &[0.0], &h, 0).unwrap().abs() < 1e-16);
        let a = se_kernel_dxdxp(&[0.3, 0.9], &[-0.4, 0.2], &h, 1).unwrap();
        let b = se_kernel_dxdxp(&[-0.4, 0.2], &[0.3, 0.9], &h, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cov_matrix_examples() {
        let h = unit(0.0);
        let one = Points::from_rows(&[[0.25]]).unwrap();
        let k = train_cov_matrix(&one, &h, true).unwrap();
        assert_eq!(k.entries[(0, 0)], 1.0);
        let two = Points::from_rows(&[[0.0], [2f64.sqrt()]]).unwrap();
        let k = cov_matrix(&two, &two, &h).unwrap();
        assert_relative_eq!(k.entries[(0, 1)], 0.367_879, epsilon = 1e-6);
        assert_eq!(k.entries[(0, 1)], k.entries[(1, 0)]);
        assert!(cov_matrix(&Points::empty(1), &two, &h).is_err());
        assert!(train_cov_matrix(&Points::empty(1), &h, true).is_err());
    }

    #[test]
    fn cross_covariance_never_adds_noise() {
        let h = unit(0.5);
        let p = Points::from_rows(&[[0.0], [1.0]]).unwrap();
        let cross = cov_matrix(&p, &p, &h).unwrap();
        let train = train_cov_matrix(&p, &h, true).unwrap();
        assert_eq!(cross.entries[(0, 0)], 1.0);
        assert_eq!(train.entries[(0, 0)], 1.25);
        assert_eq!(train.entries[(0, 1)], cross.entries[(0, 1)]);
    }

    #[test]
    fn cholesky_examples() {
        let id = Mat::<f64>::identity(3, 3);
        let c = cholesky_with_jitter(id.as_ref()).unwrap();
        assert_eq!(c.jitter(), 0.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c.lower()[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }

        // Running the ladder by hand: [[1,1],[1,1]] has a zero pivot at j = 0,
        // and at j = 1e-10 the second pivot is 1 + j − 1/(1 + j) ≈ 2e-10 > 0.
        let rank1 = Mat::from_fn(2, 2, |_, _| 1.0);
        let c = cholesky_with_jitter(rank1.as_ref()).unwrap();
        assert_eq!(c.jitter(), 1e-10);

        let a = Mat::from_fn(2, 2, |i, j| if i == j { 2.0 } else { 1.0 });
        let c = cholesky_with_jitter(a.as_ref()).unwrap();
        let l = c.lower();
        assert_relative_eq!(l[(0, 0)], 2f64.sqrt(), max_relative = 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
        assert_relative_eq!(l[(1, 0)], 1.0 / 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(l[(1, 1)], 1.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(c.log_det(), 3f64.ln(), max_relative = 1e-14);
        let x = c.solve(&[1.0, 0.0]);
        assert_relative_eq!(x[0], 2.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(x[1], -1.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn cholesky_gives_up_on_indefinite_input() {
        let a = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 3.0 });
        match cholesky_with_jitter(a.as_ref()) {
            Err(Error::IllConditioned { jitter }) => assert_eq!(jitter, 1e-4),
            other => panic!("expected ill-conditioned error, got {other:?}"),
        }
        let bad = Mat::from_fn(2, 2, |_, _| f64::NAN);
        assert!(matches!(cholesky_with_jitter(bad.as_ref()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn cov_matrix_records_jitter() {
        let h = unit(0.0);
        let p = Points::from_rows(&[[0.0], [1e-9]]).unwrap();
        let mut k = train_cov_matrix(&p, &h, true).unwrap();
        let chol = k.cholesky().unwrap();
        assert!(k.jitter_applied > 0.0);
        assert_eq!(k.jitter_applied, chol.jitter());
    }

    fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0..2.0f64, d)
    }

    fn hyper() -> impl Strategy<Value = Hyperparams> {
        (0.3..2.0f64, 0.4..2.0f64, 0.0..0.5f64)
            .prop_map(|(s, l, n)| Hyperparams::from_linear(s, l, n).unwrap())
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..=5).prop_flat_map(|d| (point(d), point(d)))
    }

    // Central differences of a smooth function on O(1) inputs lose accuracy
    // where the derivative itself is near zero, so errors are measured
    // relative to max(|derivative|, scale).
    fn rel_err(got: f64, want: f64, scale: f64) -> f64 {
        (got - want).abs() / want.abs().max(scale)
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric_and_bounded((x, xp) in pair(), h in hyper()) {
            let a = se_kernel(&x, &xp, &h, false).unwrap();
            let b = se_kernel(&xp, &x, &h, false).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a > 0.0 && a <= h.signal_variance());
        }

        #[test]
        fn dxp_matches_finite_differences((x, xp) in pair(), h in hyper(), i in 0usize..5) {
            let i = i % x.len();
            let step = 1e-5;
            let (mut up, mut down) = (xp.clone(), xp.clone());
            up[i] += step;
            down[i] -= step;
            let fd = (se_kernel(&x, &up, &h, false).unwrap() - se_kernel(&x, &down, &h, false).unwrap())
                / (2.0 * step);
            let an = se_kernel_dxp(&x, &xp, &h, i).unwrap();
            prop_assert!(rel_err(an, fd, 1e-3 * h.signal_variance()) < 1e-6, "an {} fd {}", an, fd);
        }

        #[test]
        fn dxdxp_matches_nested_finite_differences((x, xp) in pair(), h in hyper(), i in 0usize..5) {
            let i = i % x.len();
            let step = 1e-4;
            let dxp_at = |shift: f64| {
                let mut xs = x.clone();
                xs[i] += shift;
                se_kernel_dxp(&xs, &xp, &h, i).unwrap()
            };
            let fd = (dxp_at(step) - dxp_at(-step)) / (2.0 * step);
            let an = se_kernel_dxdxp(&x, &xp, &h, i).unwrap();
            prop_assert!(rel_err(an, fd, 1e-3 * h.signal_variance()) < 1e-4, "an {} fd {}", an, fd);
        }

        #[test]
        fn log_linear_round_trip(s in 1e-3..1e3f64, l in 1e-3..1e3f64, n in 1e-6..1e2f64) {
            let h = Hyperparams::from_linear(s, l, n).unwrap();
            prop_assert!((h.sigma() - s).abs() <= 4.0 * f64::EPSILON * s);
            prop_assert!((h.length_scale() - l).abs() <= 4.0 * f64::EPSILON * l);
            prop_assert!((h.noise_std() - n).abs() <= 4.0 * f64::EPSILON * n);
            prop_assert_eq!(Hyperparams::from_log(h.to_log()).unwrap(), h);
        }
    }

    #[test]
    fn noisy_training_covariance_factors_without_jitter() {
        use rand::Rng;
        let mut rng = crate::rng::from_seed(11);
        let mut clean = 0;
        for _ in 0..200 {
            let rows: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let p = Points::from_rows(&rows).unwrap();
            let h = Hyperparams::from_linear(
                rng.random_range(0.5..2.0),
                rng.random_range(0.2..1.5),
                rng.random_range(0.01..0.3),
            )
            .unwrap();
            let mut k = train_cov_matrix(&p, &h, true).unwrap();
            k.cholesky().unwrap();
            if k.jitter_applied == 0.0 {
                clean += 1;
            }
        }
        assert!(clean >= 198, "{clean} of 200 factored without jitter");
    }

    #[test]
    fn hyperparams_reject_bad_values() {
        assert!(Hyperparams::from_linear(0.0, 1.0, 0.1).is_err());
        assert!(Hyperparams::from_linear(1.0, -1.0, 0.1).is_err());
        assert!(Hyperparams::from_log([f64::NAN, 0.0, 0.0]).is_err());
        assert!(Hyperparams::from_log([800.0, 0.0, 0.0]).is_err());
        // σ_n = 0 is the noise-free model.
        assert_eq!(Hyperparams::from_linear(1.0, 1.0, 0.0).unwrap().noise_variance(), 0.0);
    }
}
