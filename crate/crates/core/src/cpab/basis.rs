use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{BoundaryCondition, Tessellation, VelocityField};
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;

/// Orthonormal basis of the CPA fields over a tessellation.
///
/// `matrix` is `(2 * n_cells) x dim`, row-major. Rows `2c` and `2c + 1` hold
/// the slope `a_c` and intercept `b_c` of cell `c`, so the field of `theta`
/// on cell `c` is `a_c x + b_c` with `(a_c, b_c) = rows(2c, 2c + 1) * theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct CpaBasis<T> {
    tess: Tessellation,
    dim: usize,
    matrix: Vec<T>,
}

impl<T: Scalar> CpaBasis<T> {
    /// Builds the basis as the orthonormalized null space of the
    /// continuity and boundary constraints.
    ///
    /// The null space is unique but its orthonormal bases are not, so the
    /// columns are fixed by Gram-Schmidt over the projections of the
    /// canonical unit vectors (in coordinate order), with the first
    /// non-zero entry of each column made positive.
    pub fn new(tess: &Tessellation) -> Result<Self> {
        let n = 2 * tess.n_cells();
        let constraints = constraint_matrix(tess);
        let gram = match &constraints {
            Some(l) => l.transpose() * l,
            None => DMatrix::zeros(n, n),
        };
        let eig = SymmetricEigen::new(gram);
        let scale = eig.eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let null_cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i].abs() < 1e-10 * scale).collect();
        let dim = tess.dim();
        if null_cols.len() != dim {
            return Err(DtanError::Numerical(format!(
                "constraint null space has dimension {} (expected {dim})",
                null_cols.len()
            )));
        }
        let null = eig.eigenvectors.select_columns(&null_cols);
        let projector = &null * null.transpose();

        let mut columns: Vec<DVector<f64>> = Vec::with_capacity(dim);
        for j in 0..n {
            if columns.len() == dim {
                break;
            }
            let mut w = projector.column(j).into_owned();
            for _ in 0..2 {
                for q in &columns {
                    let proj = q.dot(&w);
                    w.axpy(-proj, q, 1.0);
                }
            }
            let norm = w.norm();
            if norm > 1e-6 {
                w /= norm;
                if let Some(first) = w.iter().find(|v| v.abs() > 1e-12) {
                    if *first < 0.0 {
                        w.neg_mut();
                    }
                }
                columns.push(w);
            }
        }
        if columns.len() != dim {
            return Err(DtanError::Numerical("failed to orthonormalize CPA basis".into()));
        }

        let mut matrix = vec![T::zero(); n * dim];
        for (j, col) in columns.iter().enumerate() {
            for i in 0..n {
                let v = col[i];
                matrix[i * dim + j] = if v.abs() < 1e-14 { T::zero() } else { T::lit(v) };
            }
        }
        Ok(Self { tess: tess.clone(), dim, matrix })
    }

    /// Restores a basis from a stored matrix, checking its shape.
    pub fn from_matrix(tess: &Tessellation, dim: usize, matrix: Vec<T>) -> Result<Self> {
        if dim != tess.dim() || matrix.len() != 2 * tess.n_cells() * dim {
            return Err(DtanError::shape(format!(
                "basis matrix of {} entries with dim {dim} does not fit {} cells ({} boundary)",
                matrix.len(),
                tess.n_cells(),
                tess.boundary()
            )));
        }
        Ok(Self { tess: tess.clone(), dim, matrix })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tessellation(&self) -> &Tessellation {
        &self.tess
    }

    pub fn matrix(&self) -> &[T] {
        &self.matrix
    }

    #[inline]
    pub(crate) fn row(&self, r: usize) -> &[T] {
        &self.matrix[r * self.dim..(r + 1) * self.dim]
    }

    fn check_theta(&self, theta: &[T]) -> Result<()> {
        if theta.len() != self.dim {
            return Err(DtanError::shape(format!("theta has length {}, basis dim is {}", theta.len(), self.dim)));
        }
        if let Some(pos) = theta.iter().position(|v| !v.is_finite()) {
            return Err(DtanError::NonFinite(format!("theta[{pos}]")));
        }
        Ok(())
    }

    /// Per-cell affine coefficients `(a_c, b_c)` of the field of `theta`.
    pub fn field(&self, theta: &[T]) -> Result<VelocityField<T>> {
        self.check_theta(theta)?;
        let coeffs = (0..self.tess.n_cells())
            .map(|c| {
                let a = crate::scalar::dot(self.row(2 * c), theta);
                let b = crate::scalar::dot(self.row(2 * c + 1), theta);
                (a, b)
            })
            .collect();
        Ok(VelocityField::from_coeffs(self.tess.clone(), coeffs))
    }

    /// Field of `-theta`, whose flow inverts the flow of `theta`.
    pub fn inverse_field(&self, theta: &[T]) -> Result<VelocityField<T>> {
        let mut field = self.field(theta)?;
        field.negate();
        Ok(field)
    }

    pub fn velocity(&self, theta: &[T], x: T) -> Result<T> {
        self.field(theta)?.velocity(x)
    }

    /// `T^theta(x)`.
    pub fn integrate(&self, theta: &[T], x: T) -> Result<T> {
        self.field(theta)?.integrate(x)
    }

    pub fn integrate_grid(&self, theta: &[T], grid: &[T]) -> Result<Vec<T>> {
        self.field(theta)?.integrate_grid(grid)
    }

    /// `T^{-theta}(y)`, the inverse warp.
    pub fn inverse_point(&self, theta: &[T], y: T) -> Result<T> {
        self.inverse_field(theta)?.integrate(y)
    }

    pub fn inverse_grid(&self, theta: &[T], grid: &[T]) -> Result<Vec<T>> {
        self.inverse_field(theta)?.integrate_grid(grid)
    }

    /// Gradient of `T^theta(x)` with respect to `theta`.
    pub fn gradient(&self, theta: &[T], x: T) -> Result<Vec<T>> {
        let (_, jac) = self.gradient_grid(theta, &[x])?;
        Ok(jac)
    }

    /// Warped grid and its Jacobian (`grid.len() x dim`, row-major).
    pub fn gradient_grid(&self, theta: &[T], grid: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let field = self.field(theta)?;
        let n_cells = self.tess.n_cells();
        let mut values = Vec::with_capacity(grid.len());
        let mut jac = vec![T::zero(); grid.len() * self.dim];
        let mut cell_grad = vec![(T::zero(), T::zero()); n_cells];
        let mut scratch = Vec::new();
        for (m, &x) in grid.iter().enumerate() {
            cell_grad.iter_mut().for_each(|g| *g = (T::zero(), T::zero()));
            let value = field.integrate_with_cell_gradient(x, &mut cell_grad, &mut scratch)?;
            values.push(value);
            let out = &mut jac[m * self.dim..(m + 1) * self.dim];
            for (c, &(ga, gb)) in cell_grad.iter().enumerate() {
                if ga != T::zero() {
                    crate::scalar::axpy(ga, self.row(2 * c), out);
                }
                if gb != T::zero() {
                    crate::scalar::axpy(gb, self.row(2 * c + 1), out);
                }
            }
        }
        Ok((values, jac))
    }

    /// Jacobian-transpose product: `sum_m upstream[m] * dT(grid[m])/dtheta`.
    ///
    /// Avoids materializing the `grid.len() x dim` Jacobian.
    pub fn gradient_vjp(&self, theta: &[T], grid: &[T], upstream: &[T]) -> Result<Vec<T>> {
        if upstream.len() != grid.len() {
            return Err(DtanError::shape("upstream length differs from grid length"));
        }
        let field = self.field(theta)?;
        let n_cells = self.tess.n_cells();
        let mut total = vec![(T::zero(), T::zero()); n_cells];
        let mut cell_grad = vec![(T::zero(), T::zero()); n_cells];
        let mut scratch = Vec::new();
        for (&x, &g) in grid.iter().zip(upstream) {
            if g == T::zero() {
                continue;
            }
            cell_grad.iter_mut().for_each(|v| *v = (T::zero(), T::zero()));
            field.integrate_with_cell_gradient(x, &mut cell_grad, &mut scratch)?;
            for (acc, &(ga, gb)) in total.iter_mut().zip(&cell_grad) {
                acc.0 += g * ga;
                acc.1 += g * gb;
            }
        }
        let mut out = vec![T::zero(); self.dim];
        for (c, &(ga, gb)) in total.iter().enumerate() {
            crate::scalar::axpy(ga, self.row(2 * c), &mut out);
            crate::scalar::axpy(gb, self.row(2 * c + 1), &mut out);
        }
        Ok(out)
    }
}

/// Continuity rows at interior vertices plus the boundary rows.
fn constraint_matrix(tess: &Tessellation) -> Option<DMatrix<f64>> {
    let nc = tess.n_cells();
    let n = 2 * nc;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for k in 1..nc {
        let x = tess.vertex::<f64>(k);
        let mut row = vec![0.0; n];
        row[2 * (k - 1)] = x;
        row[2 * (k - 1) + 1] = 1.0;
        row[2 * k] = -x;
        row[2 * k + 1] = -1.0;
        rows.push(row);
    }
    match tess.boundary() {
        BoundaryCondition::Free => {}
        BoundaryCondition::ZeroBoundary => {
            let mut left = vec![0.0; n];
            left[1] = 1.0;
            let mut right = vec![0.0; n];
            right[2 * (nc - 1)] = 1.0;
            right[2 * (nc - 1) + 1] = 1.0;
            rows.push(left);
            rows.push(right);
        }
        BoundaryCondition::Circular => {
            let mut row = vec![0.0; n];
            row[1] += 1.0;
            row[2 * (nc - 1)] -= 1.0;
            row[2 * (nc - 1) + 1] -= 1.0;
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}
