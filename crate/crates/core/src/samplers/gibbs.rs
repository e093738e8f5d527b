//! Conjugate updates for the hierarchy: stacked coefficients `B` given the
//! per-user parameters and `Ω`, and `Ω` given the residuals.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Design;

/// Multivariate-normal full conditional of `B`.
///
/// With prior `B ~ N(0, v I)` and `Θ_i ~ N(A_i B, Ω)`:
///
/// ```text
/// P = I / v + Σ_i A_iᵀ Ω⁻¹ A_i
/// m = P⁻¹ Σ_i A_iᵀ Ω⁻¹ Θ_i
/// ```
#[derive(Debug, Clone)]
pub struct CoefficientPosterior {
    pub mean: DVector<f64>,
    precision: Cholesky<f64, Dyn>,
}

impl CoefficientPosterior {
    pub fn new(designs: &[&Design], thetas: &[[f64; 3]], omega_inv: &Matrix3<f64>, prior_variance: f64) -> Result<Self> {
        if designs.len() != thetas.len() {
            return Err(Error::Config("one design per parameter triple required".into()));
        }
        let lens: [usize; 3] = match designs.first() {
            Some(d) => [d.blocks[0].len(), d.blocks[1].len(), d.blocks[2].len()],
            None => return Self::prior_only(0, prior_variance),
        };
        let offsets = [0, lens[0], lens[0] + lens[1]];
        let dim = lens.iter().sum::<usize>();
        let mut precision = DMatrix::<f64>::identity(dim, dim) / prior_variance;
        let mut rhs = DVector::<f64>::zeros(dim);
        for (design, theta) in designs.iter().zip(thetas) {
            if design.blocks.iter().map(Vec::len).ne(lens) {
                return Err(Error::Config("all users must share the same design layout".into()));
            }
            for b in 0..3 {
                let xb = &design.blocks[b];
                let weighted: f64 = (0..3).map(|c| omega_inv[(b, c)] * theta[c]).sum();
                for (r, x) in xb.iter().enumerate() {
                    rhs[offsets[b] + r] += weighted * x;
                }
                for c in 0..3 {
                    let w = omega_inv[(b, c)];
                    let xc = &design.blocks[c];
                    for (r, xr) in xb.iter().enumerate() {
                        for (q, xq) in xc.iter().enumerate() {
                            precision[(offsets[b] + r, offsets[c] + q)] += w * xr * xq;
                        }
                    }
                }
            }
        }
        Self::from_precision(precision, rhs)
    }

    /// Posterior with no users, i.e. the prior `N(0, v I)` over `dim` coefficients.
    pub fn prior_only(dim: usize, prior_variance: f64) -> Result<Self> {
        Self::from_precision(DMatrix::identity(dim, dim) / prior_variance, DVector::zeros(dim))
    }

    fn from_precision(precision: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        let chol = Cholesky::new(precision)
            .ok_or_else(|| Error::Numerical { iteration: 0, message: "coefficient precision not positive definite".into() })?;
        let mean = chol.solve(&rhs);
        Ok(Self { mean, precision: chol })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let dim = self.mean.len();
        let z = DVector::<f64>::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // Lᵀ y = z gives y ~ N(0, P⁻¹).
        let y = self
            .precision
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        (&self.mean + y).iter().copied().collect()
    }
}

/// Draws `Ω ~ W⁻¹(scale, dof)` through the Bartlett decomposition of the
/// matching Wishart draw on `Ω⁻¹`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(scale: &Matrix3<f64>, dof: f64, rng: &mut R) -> Option<Matrix3<f64>> {
    if !(dof > 2.0) {
        return None;
    }
    let scale_inv = scale.try_inverse()?;
    let l = scale_inv.cholesky()?.l();
    let mut a = Matrix3::<f64>::zeros();
    for i in 0..3 {
        let chi = ChiSquared::new(dof - i as f64).ok()?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let wishart = la * la.transpose();
    let omega = wishart.try_inverse()?;
    let omega = (omega + omega.transpose()) * 0.5;
    omega.cholesky().map(|_| omega)
}

/// Scale matrix of the `Ω` full conditional, `Σ_i ε_i ε_iᵀ + Ψ`.
pub fn residual_scatter(residuals: impl Iterator<Item = [f64; 3]>, psi: &Matrix3<f64>) -> Matrix3<f64> {
    let mut s = *psi;
    for r in residuals {
        let v = Vector3::from(r);
        s += v * v.transpose();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prior_only_posterior_is_prior() {
        let post = CoefficientPosterior::new(&[], &[], &Matrix3::identity(), 100.0).unwrap();
        assert_eq!(post.mean.len(), 0);
        let post = CoefficientPosterior::prior_only(4, 100.0).unwrap();
        assert!(post.mean.iter().all(|m| *m == 0.0));
        let cov = post.covariance();
        assert!((cov[(2, 2)] - 100.0).abs() < 1e-10);
    }

    #[test]
    fn posterior_matches_dense_formula() {
        let designs = [Design::shared(vec![1.0, 0.3]), Design::shared(vec![1.0, -1.1]), Design::shared(vec![1.0, 0.8])];
        let thetas = [[0.5, -0.2, 1.0], [0.1, 0.4, -0.3], [-0.6, 0.0, 0.2]];
        let omega = Matrix3::new(0.5, 0.1, 0.0, 0.1, 0.4, 0.05, 0.0, 0.05, 0.3);
        let oinv = omega.try_inverse().unwrap();
        let refs: Vec<&Design> = designs.iter().collect();
        let post = CoefficientPosterior::new(&refs, &thetas, &oinv, 100.0).unwrap();

        // Build A_i explicitly as 3 x 6 matrices.
        let mut prec = DMatrix::<f64>::identity(6, 6) / 100.0;
        let mut rhs = DVector::<f64>::zeros(6);
        for (d, t) in designs.iter().zip(&thetas) {
            let mut a = DMatrix::<f64>::zeros(3, 6);
            for b in 0..3 {
                for (r, x) in d.blocks[b].iter().enumerate() {
                    a[(b, 2 * b + r)] = *x;
                }
            }
            let oinv_d = DMatrix::from_iterator(3, 3, oinv.iter().copied());
            prec += a.transpose() * &oinv_d * &a;
            rhs += a.transpose() * &oinv_d * DVector::from_row_slice(t);
        }
        let mean = prec.clone().try_inverse().unwrap() * rhs;
        for (x, y) in post.mean.iter().zip(mean.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
        let cov = post.covariance();
        let dense = prec.try_inverse().unwrap();
        assert!((cov - dense).abs().max() < 1e-10);
    }

    #[test]
    fn inverse_wishart_mean() {
        // E[Ω] = S / (ν - p - 1).
        let scale = Matrix3::new(2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 1.5);
        let dof = 12.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20000;
        let mut acc = Matrix3::zeros();
        for _ in 0..n {
            acc += sample_inverse_wishart(&scale, dof, &mut rng).unwrap();
        }
        let mean = acc / n as f64;
        let expected = scale / (dof - 4.0);
        assert!((mean - expected).abs().max() < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn inverse_wishart_rejects_bad_dof() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_inverse_wishart(&Matrix3::identity(), 1.5, &mut rng).is_none());
    }
}
