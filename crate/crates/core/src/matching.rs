//! Transforms of Gaussian posteriors into interpretable domains.
//!
//! Memberships live on the simplex, so their Gaussian (in softmax-basis
//! coordinates) is matched to a Dirichlet. Positive quantities use the
//! log-normal and probabilities the logit-normal.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::math;
use crate::{Error, Result};

/// Lower bound used by [`gaussian_to_dirichlet_clamped`].
pub const ALPHA_CLAMP: f64 = 1e-6;

/// Grid size for the logit-normal mean.
pub const LOGIT_NORMAL_GRID: usize = 4097;

/// Marginal Gaussian of one block: mean and diagonal of the covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlock {
    mean: Vec<f64>,
    variance_diag: Vec<f64>,
}

impl GaussianBlock {
    pub fn new(mean: Vec<f64>, variance_diag: Vec<f64>) -> Result<Self> {
        if mean.len() != variance_diag.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} entries, variance {}",
                mean.len(),
                variance_diag.len()
            )));
        }
        math::ensure_finite(&mean, "Gaussian mean")?;
        if let Some(k) = variance_diag.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "variance {k} must be positive and finite, got {}",
                variance_diag[k]
            )));
        }
        Ok(Self { mean, variance_diag })
    }

    /// Takes the diagonal of a full covariance block.
    pub fn from_covariance(mean: &[f64], covariance: &DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, mean has {} entries",
                covariance.nrows(),
                covariance.ncols(),
                mean.len()
            )));
        }
        Self::new(mean.to_vec(), covariance.diagonal().iter().copied().collect())
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance_diag(&self) -> &[f64] {
        &self.variance_diag
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPosterior {
    alpha: Vec<f64>,
}

impl DirichletPosterior {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidArgument("Dirichlet with no components".into()));
        }
        for (index, &value) in alpha.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveAlpha { index, value });
            }
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn into_alpha(self) -> Vec<f64> {
        self.alpha
    }
}

fn raw_alpha(g: &GaussianBlock) -> Result<Vec<f64>> {
    let k = g.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("Laplace matching needs K >= 2, got {k}")));
    }
    let kf = k as f64;
    let max = g.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + math::ln(g.mean.iter().map(|&m| math::exp(m - max)).sum::<f64>());
    let base = 1.0 - 2.0 / kf;
    let alpha: Vec<f64> = g
        .mean
        .iter()
        .zip(&g.variance_diag)
        .map(|(&mu, &var)| (base + math::exp(mu + lse - 2.0 * math::ln(kf))) / var)
        .collect();
    if let Some(i) = alpha.iter().position(|a| !a.is_finite()) {
        return Err(Error::NonFinite(format!("alpha[{i}] overflowed for mean {}", g.mean[i])));
    }
    Ok(alpha)
}

/// Laplace matching of a softmax-basis Gaussian to a Dirichlet:
/// `alpha_k = (1 - 2/K + exp(mu_k) sum_l exp(mu_l) / K^2) / var_k`.
///
/// The exponential term is evaluated in log space. A nonpositive `alpha_k`
/// is reported as [`Error::NonPositiveAlpha`].
pub fn gaussian_to_dirichlet(g: &GaussianBlock) -> Result<DirichletPosterior> {
    DirichletPosterior::new(raw_alpha(g)?)
}

/// As [`gaussian_to_dirichlet`] but nonpositive components are raised to
/// [`ALPHA_CLAMP`].
pub fn gaussian_to_dirichlet_clamped(g: &GaussianBlock) -> Result<DirichletPosterior> {
    let alpha = raw_alpha(g)?.into_iter().map(|a| a.max(ALPHA_CLAMP)).collect();
    DirichletPosterior::new(alpha)
}

pub fn dirichlet_mean(d: &DirichletPosterior) -> Vec<f64> {
    let total: f64 = d.alpha.iter().sum();
    d.alpha.iter().map(|a| a / total).collect()
}

/// Softmax of the posterior mean; the alternative to [`dirichlet_mean`].
pub fn softmax_point_estimate(mean: &[f64]) -> Result<Vec<f64>> {
    math::softmax_row(mean)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormal {
    pub mu: f64,
    pub variance: f64,
}

impl LogNormal {
    pub fn mean(&self) -> f64 {
        math::exp(self.mu + 0.5 * self.variance)
    }

    pub fn median(&self) -> f64 {
        math::exp(self.mu)
    }
}

pub fn lognormal_params(g: &GaussianBlock) -> Vec<LogNormal> {
    g.mean
        .iter()
        .zip(&g.variance_diag)
        .map(|(&mu, &variance)| LogNormal { mu, variance })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitNormal {
    pub mu: f64,
    pub variance: f64,
}

impl LogitNormal {
    pub fn median(&self) -> f64 {
        math::logistic(self.mu)
    }

    /// Trapezoid integration of `x p(x)` over a uniform grid on `[0, 1]`,
    /// normalized by the integral of `p` on the same grid. Falls back to the
    /// median when the density is narrower than the grid.
    pub fn mean(&self) -> f64 {
        let n = LOGIT_NORMAL_GRID - 1;
        let h = 1.0 / n as f64;
        let mut mass = 0.0;
        let mut first = 0.0;
        // endpoints carry zero density
        for m in 1..n {
            let x = m as f64 * h;
            let logit = math::ln(x / (1.0 - x));
            let p = math::exp(math::normal_ln_pdf(logit, self.mu, self.variance)) / (x * (1.0 - x));
            mass += p;
            first += x * p;
        }
        if mass > 0.0 && mass.is_finite() && first.is_finite() {
            first / mass
        } else {
            self.median()
        }
    }
}

pub fn logitnormal_params(g: &GaussianBlock) -> Vec<LogitNormal> {
    g.mean
        .iter()
        .zip(&g.variance_diag)
        .map(|(&mu, &variance)| LogitNormal { mu, variance })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn block(mean: &[f64], var: &[f64]) -> GaussianBlock {
        GaussianBlock::new(mean.to_vec(), var.to_vec()).unwrap()
    }

    #[test]
    fn symmetric_alpha_examples() {
        let d = gaussian_to_dirichlet(&block(&[0.0, 0.0], &[1.0, 1.0])).unwrap();
        for a in d.alpha() {
            assert!((a - 0.5).abs() < 1e-12);
        }
        let d = gaussian_to_dirichlet(&block(&[0.0; 3], &[1.0; 3])).unwrap();
        for a in d.alpha() {
            assert!((a - 2.0 / 3.0).abs() < 1e-12);
        }
        for var in [0.1, 0.37, 4.0] {
            let d = gaussian_to_dirichlet(&block(&[0.0, 0.0], &[var, var])).unwrap();
            assert!((d.alpha()[0] - 1.0 / (2.0 * var)).abs() < 1e-12 * d.alpha()[0]);
        }
    }

    #[test]
    fn asymmetric_alpha_example() {
        // direct evaluation: S = e + 2, alpha_0 = 2 (1/3 + e S / 9), alpha_1 = 2 (1/3 + S / 9)
        let e = core::f64::consts::E;
        let s = e + 2.0;
        let a0 = 2.0 * (1.0 / 3.0 + e * s / 9.0);
        let a1 = 2.0 * (1.0 / 3.0 + s / 9.0);
        let d = gaussian_to_dirichlet(&block(&[1.0, 0.0, 0.0], &[0.5; 3])).unwrap();
        assert!((d.alpha()[0] - a0).abs() < 1e-12);
        assert!((d.alpha()[1] - a1).abs() < 1e-12);
        assert!((d.alpha()[0] - 3.5165).abs() < 1e-3);
        assert!((d.alpha()[1] - 1.7152).abs() < 1e-3);
        let m = dirichlet_mean(&d);
        assert!((m[0] - 0.5062).abs() < 1e-3);
        assert!((m[1] - 0.2469).abs() < 1e-3);
    }

    #[test]
    fn large_means_do_not_overflow() {
        let d = gaussian_to_dirichlet(&block(&[300.0, 300.0, 0.0], &[1.0; 3])).unwrap();
        assert!(d.alpha().iter().all(|a| a.is_finite() && *a > 0.0));
        assert!(gaussian_to_dirichlet(&block(&[400.0, 400.0], &[1.0; 2])).is_err());
    }

    #[test]
    fn underflowing_alpha_is_an_error_unless_clamped() {
        let g = block(&[-800.0, 0.0], &[1.0, 1.0]);
        match gaussian_to_dirichlet(&g) {
            Err(Error::NonPositiveAlpha { index, .. }) => assert_eq!(index, 0),
            other => panic!("unexpected {other:?}"),
        }
        let d = gaussian_to_dirichlet_clamped(&g).unwrap();
        assert_eq!(d.alpha()[0], ALPHA_CLAMP);
    }

    #[test]
    fn rejects_bad_blocks() {
        assert!(GaussianBlock::new(vec![0.0], vec![0.0]).is_err());
        assert!(GaussianBlock::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(GaussianBlock::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(gaussian_to_dirichlet(&block(&[0.0], &[1.0])).is_err());
        assert!(DirichletPosterior::new(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn dirichlet_mean_examples() {
        let m = dirichlet_mean(&DirichletPosterior::new(vec![1.0; 3]).unwrap());
        assert!(m.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let m = dirichlet_mean(&DirichletPosterior::new(vec![2.0, 2.0]).unwrap());
        assert_eq!(m, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_point_examples() {
        let s = softmax_point_estimate(&[0.0; 3]).unwrap();
        assert!(s.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let s = softmax_point_estimate(&[2.0, -1.0, -1.0]).unwrap();
        assert!((s[0] - 0.909443).abs() < 1e-6 && (s[2] - 0.045279).abs() < 1e-6);
    }

    #[test]
    fn lognormal_examples() {
        let p = lognormal_params(&block(&[0.0, 0.0, 1.0], &[1e-12, 2.0, 0.5]));
        assert!((p[0].mean() - 1.0).abs() < 1e-9);
        assert!((p[1].mean() - core::f64::consts::E).abs() < 1e-12);
        assert!((p[2].mean() - 1.25f64.exp()).abs() < 1e-12);
        assert!((p[2].mean() - 3.49034).abs() < 1e-5);
        assert_eq!(p[1].median(), 1.0);
    }

    #[test]
    fn logitnormal_examples() {
        let p = logitnormal_params(&block(&[0.0, 2.0, 0.0, 2.0], &[0.3, 1e-4, 1.0, 1e-30]));
        assert_eq!(p[0].median(), 0.5);
        assert!((p[1].mean() - 0.88080).abs() < 1e-4, "{}", p[1].mean());
        assert!((p[2].mean() - 0.5).abs() < 1e-6);
        assert!((p[3].mean() - math::logistic(2.0)).abs() < 1e-12);
    }

    #[test]
    fn logitnormal_mean_matches_gauss_hermite_style_oracle() {
        // independent oracle: E[logistic(Z)] by a fine midpoint rule in the Gaussian domain
        let (mu, var): (f64, f64) = (0.7, 0.8);
        let sd = var.sqrt();
        let steps = 200_000;
        let lo = mu - 12.0 * sd;
        let h = 24.0 * sd / steps as f64;
        let mut acc = 0.0;
        for s in 0..steps {
            let z = lo + (s as f64 + 0.5) * h;
            let w = (-(z - mu) * (z - mu) / (2.0 * var)).exp() / (2.0 * core::f64::consts::PI * var).sqrt();
            acc += w * h / (1.0 + (-z).exp());
        }
        let est = LogitNormal { mu, variance: var }.mean();
        assert!((est - acc).abs() < 1e-5, "{est} vs {acc}");
    }

    proptest! {
        #[test]
        fn permutation_equivariance(
            mean in prop::collection::vec(-2.0f64..2.0, 2..6),
            seed in 0usize..1000,
        ) {
            let k = mean.len();
            let var: Vec<f64> = (0..k).map(|i| 0.1 + ((i * 7 + seed) % 10) as f64 * 0.1).collect();
            let perm: Vec<usize> = (0..k).map(|i| (i + seed) % k).collect();
            let a = gaussian_to_dirichlet(&block(&mean, &var)).unwrap();
            let pm: Vec<f64> = perm.iter().map(|&p| mean[p]).collect();
            let pv: Vec<f64> = perm.iter().map(|&p| var[p]).collect();
            let b = gaussian_to_dirichlet(&block(&pm, &pv)).unwrap();
            for i in 0..k {
                prop_assert!((b.alpha()[i] - a.alpha()[perm[i]]).abs() <= 1e-12 * a.alpha()[perm[i]]);
            }
        }

        #[test]
        fn dirichlet_mean_is_on_simplex(alpha in prop::collection::vec(1e-6f64..1e6, 1..8)) {
            let m = dirichlet_mean(&DirichletPosterior::new(alpha).unwrap());
            prop_assert!(m.iter().all(|x| *x > 0.0));
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn argmax_agrees_for_equal_variances(
            mean in prop::collection::vec(-3.0f64..3.0, 2..7),
            var in 0.05f64..3.0,
        ) {
            let vars = vec![var; mean.len()];
            let d = dirichlet_mean(&gaussian_to_dirichlet(&block(&mean, &vars)).unwrap());
            let s = softmax_point_estimate(&mean).unwrap();
            let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
            prop_assert_eq!(argmax(&d), argmax(&s));
        }

        #[test]
        fn softmax_point_is_shift_invariant(
            mean in prop::collection::vec(-5.0f64..5.0, 1..6),
            c in -50.0f64..50.0,
        ) {
            let a = softmax_point_estimate(&mean).unwrap();
            let shifted: Vec<f64> = mean.iter().map(|m| m + c).collect();
            let b = softmax_point_estimate(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
