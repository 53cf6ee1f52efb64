use nalgebra::DMatrix;
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{CpaBasis, Theta};
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-6;

/// Zero-mean Gaussian smoothness prior over CPA fields, expressed on `theta`.
///
/// The per-cell slopes and intercepts each get a squared-exponential
/// covariance over cell centers (length-scale `lambda_smooth`, no
/// slope/intercept cross-covariance), scaled by `lambda_sigma^2` and pulled
/// back through the basis: `Sigma = lambda_sigma^2 B^T K B + jitter I`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorCovariance<T> {
    dim: usize,
    sigma: Vec<T>,
    factor: Vec<T>,
    lambda_sigma: T,
    lambda_smooth: T,
    jitter: f64,
}

impl<T: Scalar> PriorCovariance<T> {
    pub fn new(basis: &CpaBasis<T>, lambda_sigma: T, lambda_smooth: T) -> Result<Self> {
        if !(lambda_sigma > T::zero()) || !(lambda_smooth > T::zero()) {
            return Err(DtanError::invalid(format!(
                "prior hyperparameters must be positive (lambda_sigma={lambda_sigma}, lambda_smooth={lambda_smooth})"
            )));
        }
        let tess = basis.tessellation();
        let nc = tess.n_cells();
        let d = basis.dim();
        let ls = lambda_smooth.as_f64();
        let kernel = DMatrix::from_fn(2 * nc, 2 * nc, |i, j| {
            if i % 2 != j % 2 {
                return 0.0;
            }
            let dist = tess.cell_center(i / 2) - tess.cell_center(j / 2);
            (-dist * dist / (2.0 * ls * ls)).exp()
        });
        let b = DMatrix::from_fn(2 * nc, d, |i, j| basis.matrix()[i * d + j].as_f64());
        let scale = lambda_sigma.as_f64().powi(2);
        let mut base = b.transpose() * kernel * &b * scale;
        base = (&base + base.transpose()) * 0.5;

        let mut jitter = JITTER_START;
        loop {
            let sigma = &base + DMatrix::identity(d, d) * jitter;
            if let Some(chol) = sigma.clone().cholesky() {
                let l = chol.l();
                let to_vec = |m: &DMatrix<f64>| (0..d * d).map(|k| T::lit(m[(k / d, k % d)])).collect::<Vec<T>>();
                return Ok(Self {
                    dim: d,
                    sigma: to_vec(&sigma),
                    factor: to_vec(&l),
                    lambda_sigma,
                    lambda_smooth,
                    jitter,
                });
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(DtanError::Numerical(
                    "prior covariance is not positive definite even with jitter 1e-6".into(),
                ));
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Sigma_CPA`, row-major.
    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    /// Lower-triangular Cholesky factor of `Sigma_CPA`, row-major.
    pub fn factor(&self) -> &[T] {
        &self.factor
    }

    pub fn lambda_sigma(&self) -> T {
        self.lambda_sigma
    }

    pub fn lambda_smooth(&self) -> T {
        self.lambda_smooth
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check(&self, theta: &[T]) -> Result<()> {
        if theta.len() != self.dim {
            return Err(DtanError::shape(format!("theta has length {}, prior dim is {}", theta.len(), self.dim)));
        }
        Ok(())
    }

    /// Solves `L z = theta` by forward substitution.
    pub fn whiten(&self, theta: &[T]) -> Result<Vec<T>> {
        self.check(theta)?;
        let d = self.dim;
        let mut z = vec![T::zero(); d];
        for i in 0..d {
            let row = &self.factor[i * d..i * d + i];
            let s = theta[i] - crate::scalar::dot(row, &z[..i]);
            z[i] = s / self.factor[i * d + i];
        }
        Ok(z)
    }

    /// `theta^T Sigma^{-1} theta`.
    pub fn quadratic_form(&self, theta: &[T]) -> Result<T> {
        Ok(crate::scalar::sq_norm(&self.whiten(theta)?))
    }

    /// `Sigma^{-1} theta` via two triangular solves.
    pub fn solve(&self, theta: &[T]) -> Result<Vec<T>> {
        let z = self.whiten(theta)?;
        let d = self.dim;
        let mut x = vec![T::zero(); d];
        for i in (0..d).rev() {
            let mut s = z[i];
            for k in i + 1..d {
                s -= self.factor[k * d + i] * x[k];
            }
            x[i] = s / self.factor[i * d + i];
        }
        Ok(x)
    }

    /// Draws `theta = L z` with `z` standard normal.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta<T> {
        let d = self.dim;
        let z: Vec<T> = (0..d).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
        let theta = (0..d).map(|i| crate::scalar::dot(&self.factor[i * d..i * d + i + 1], &z[..i + 1])).collect();
        Theta::new(theta).expect("finite prior sample")
    }

    pub fn sample(&self, seed: u64) -> Theta<T> {
        self.sample_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpab::{BoundaryCondition, Tessellation};

    fn basis(n: usize, bc: BoundaryCondition) -> CpaBasis<f64> {
        CpaBasis::new(&Tessellation::new(n, bc).unwrap()).unwrap()
    }

    fn dense_inverse_quadratic(prior: &PriorCovariance<f64>, theta: &[f64]) -> f64 {
        let d = prior.dim();
        let s = DMatrix::from_row_slice(d, d, prior.sigma());
        let inv = s.try_inverse().unwrap();
        let t = nalgebra::DVector::from_column_slice(theta);
        (t.transpose() * inv * &t)[(0, 0)]
    }

    #[test]
    fn factor_reconstructs_sigma() {
        let b = basis(16, BoundaryCondition::ZeroBoundary);
        let p = PriorCovariance::new(&b, 0.1, 0.5).unwrap();
        let d = p.dim();
        let l = DMatrix::from_row_slice(d, d, p.factor());
        let s = DMatrix::from_row_slice(d, d, p.sigma());
        let err = (&l * l.transpose() - &s).norm() / s.norm();
        assert!(err < 1e-9);
        assert!(s.symmetric_eigenvalues().iter().all(|&e| e > 0.0));
    }

    #[test]
    fn rejects_non_positive_hyperparameters() {
        let b = basis(4, BoundaryCondition::Free);
        assert!(PriorCovariance::new(&b, 0.0, 0.5).is_err());
        assert!(PriorCovariance::new(&b, 0.1, -1.0).is_err());
    }

    #[test]
    fn quadratic_form_of_whitened_unit_vector_is_one() {
        let b = basis(8, BoundaryCondition::Free);
        let p = PriorCovariance::new(&b, 0.1, 0.5).unwrap();
        let d = p.dim();
        let theta: Vec<f64> = (0..d).map(|i| p.factor()[i * d]).collect();
        assert!((p.quadratic_form(&theta).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(p.quadratic_form(&vec![0.0; d]).unwrap(), 0.0);
    }

    #[test]
    fn triangular_solves_match_dense_inverse() {
        use rand::Rng;
        let b = basis(16, BoundaryCondition::Free);
        // Short length-scale keeps Sigma well conditioned, so the dense
        // inverse is itself accurate enough to serve as the reference.
        let p = PriorCovariance::new(&b, 1.0, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = p.quadratic_form(&theta).unwrap();
            let slow = dense_inverse_quadratic(&p, &theta);
            assert!((fast - slow).abs() <= 1e-9 * slow.abs(), "{fast} vs {slow}");
            let x = p.solve(&theta).unwrap();
            let d = p.dim();
            for i in 0..d {
                let back: f64 = (0..d).map(|k| p.sigma()[i * d + k] * x[k]).sum();
                assert!((back - theta[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn quadratic_form_recovers_whitened_norm_on_ill_conditioned_prior() {
        use rand::Rng;
        let b = basis(16, BoundaryCondition::ZeroBoundary);
        let p = PriorCovariance::new(&b, 0.1, 0.5).unwrap();
        let d = p.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let theta: Vec<f64> = (0..d).map(|i| (0..=i).map(|k| p.factor()[i * d + k] * z[k]).sum()).collect();
            let expected: f64 = z.iter().map(|v| v * v).sum();
            let q = p.quadratic_form(&theta).unwrap();
            assert!((q - expected).abs() < 1e-9 * expected, "{q} vs {expected}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let b = basis(4, BoundaryCondition::Circular);
        let p = PriorCovariance::new(&b, 0.5, 0.5).unwrap();
        assert_eq!(p.sample(7), p.sample(7));
        assert_ne!(p.sample(7), p.sample(8));
    }
}
