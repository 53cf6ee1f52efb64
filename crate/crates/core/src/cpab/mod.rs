//! Continuous piecewise-affine (CPA) velocity fields on the unit interval and
//! the diffeomorphisms obtained by integrating them for unit time.
//!
//! A [`Tessellation`] splits `[0, 1]` into `n_cells` equal cells. A
//! [`CpaBasis`] is an orthonormal basis of the affine-per-cell fields that are
//! continuous at interior vertices and satisfy the chosen
//! [`BoundaryCondition`]. A coefficient vector `theta` in that basis describes
//! one field `v`, and the warp `T(x)` is the solution at `t = 1` of
//! `dx/dt = v(x)` started at `x`.
//!
//! Integration is exact: inside a cell the ODE is linear and solved in closed
//! form, and the trajectory hops from cell to cell at analytically computed
//! boundary-hitting times. The derivative of `T(x)` with respect to `theta`
//! is obtained by differentiating that recursion.

mod basis;
mod integrate;
mod prior;
mod squaring;

use std::fmt;
use std::str::FromStr;

pub use basis::CpaBasis;
pub use integrate::VelocityField;
pub use prior::PriorCovariance;
pub use squaring::integrate_grid_squaring;

use crate::error::{DtanError, Result};
use crate::scalar::Scalar;

/// Threshold on `|a|` below which a cell's flow is treated as a translation
/// (with a second-order correction).
pub const LINEAR_BRANCH_EPS: f64 = 1e-10;

/// Maximum number of cell crossings per point, per cell of the tessellation.
pub const HOPS_PER_CELL: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryCondition {
    /// No constraint beyond continuity; warps may leave `[0, 1]`.
    Free,
    /// The field vanishes at both endpoints, which become fixed points.
    ZeroBoundary,
    /// The field takes equal values at both endpoints; the domain wraps.
    Circular,
}

impl BoundaryCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Free => "free",
            Self::ZeroBoundary => "zero_boundary",
            Self::Circular => "circular",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Self::Free => 0,
            Self::ZeroBoundary => 1,
            Self::Circular => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Free),
            1 => Some(Self::ZeroBoundary),
            2 => Some(Self::Circular),
            _ => None,
        }
    }
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundaryCondition {
    type Err = DtanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "free" | "none" => Ok(Self::Free),
            "zero_boundary" | "zero" | "zero-boundary" => Ok(Self::ZeroBoundary),
            "circular" | "periodic" => Ok(Self::Circular),
            other => Err(DtanError::invalid(format!("unknown boundary condition `{other}`"))),
        }
    }
}

/// Uniform partition of `[0, 1]` into `n_cells` cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tessellation {
    n_cells: usize,
    boundary: BoundaryCondition,
}

impl Tessellation {
    pub fn new(n_cells: usize, boundary: BoundaryCondition) -> Result<Self> {
        if n_cells == 0 {
            return Err(DtanError::invalid("tessellation needs at least one cell"));
        }
        if boundary == BoundaryCondition::ZeroBoundary && n_cells < 2 {
            return Err(DtanError::invalid(
                "zero-boundary fields need at least two cells (one cell leaves only the zero field)",
            ));
        }
        Ok(Self { n_cells, boundary })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn boundary(&self) -> BoundaryCondition {
        self.boundary
    }

    /// Dimension of the constrained field space.
    pub fn dim(&self) -> usize {
        match self.boundary {
            BoundaryCondition::Free => self.n_cells + 1,
            BoundaryCondition::ZeroBoundary => self.n_cells - 1,
            BoundaryCondition::Circular => self.n_cells,
        }
    }

    pub fn vertex<T: Scalar>(&self, k: usize) -> T {
        T::from_usize_lossy(k) / T::from_usize_lossy(self.n_cells)
    }

    pub fn vertices<T: Scalar>(&self) -> Vec<T> {
        (0..=self.n_cells).map(|k| self.vertex(k)).collect()
    }

    /// Cell containing `x` in `[0, 1]`; cells are right-open except the last.
    pub fn cell_index<T: Scalar>(&self, x: T) -> usize {
        let scaled = (x * T::from_usize_lossy(self.n_cells)).floor();
        if scaled <= T::zero() {
            0
        } else {
            scaled.to_usize().unwrap_or(usize::MAX).min(self.n_cells - 1)
        }
    }

    pub fn cell_center(&self, c: usize) -> f64 {
        (c as f64 + 0.5) / self.n_cells as f64
    }
}

/// Convenience constructor mirroring [`Tessellation::new`].
pub fn build_tessellation(n_cells: usize, boundary: BoundaryCondition) -> Result<Tessellation> {
    Tessellation::new(n_cells, boundary)
}

/// Warp parameter vector: coefficients of a field in a [`CpaBasis`].
#[derive(Clone, Debug, PartialEq)]
pub struct Theta<T>(Vec<T>);

impl<T: Scalar> Theta<T> {
    pub fn new(coeffs: Vec<T>) -> Result<Self> {
        if let Some(pos) = coeffs.iter().position(|v| !v.is_finite()) {
            return Err(DtanError::NonFinite(format!("theta[{pos}]")));
        }
        Ok(Self(coeffs))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn norm(&self) -> T {
        crate::scalar::sq_norm(&self.0).sqrt()
    }
}

impl<T> std::ops::Deref for Theta<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> AsRef<[T]> for Theta<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_vertices() {
        let t = Tessellation::new(4, BoundaryCondition::Free).unwrap();
        assert_eq!(t.vertices::<f64>(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let one = Tessellation::new(1, BoundaryCondition::Free).unwrap();
        assert_eq!(one.vertices::<f64>(), vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_degenerate_tessellations() {
        assert!(Tessellation::new(0, BoundaryCondition::Free).is_err());
        assert!(Tessellation::new(1, BoundaryCondition::ZeroBoundary).is_err());
        let t = Tessellation::new(2, BoundaryCondition::ZeroBoundary).unwrap();
        assert_eq!(t.dim(), 1);
    }

    #[test]
    fn cells_are_right_open_last_closed() {
        let t = Tessellation::new(4, BoundaryCondition::Free).unwrap();
        assert_eq!(t.cell_index(0.0), 0);
        assert_eq!(t.cell_index(0.25), 1);
        assert_eq!(t.cell_index(0.2499), 0);
        assert_eq!(t.cell_index(1.0), 3);
    }

    #[test]
    fn boundary_condition_parses() {
        assert_eq!("zero_boundary".parse::<BoundaryCondition>().unwrap(), BoundaryCondition::ZeroBoundary);
        assert_eq!("Circular".parse::<BoundaryCondition>().unwrap(), BoundaryCondition::Circular);
        assert!("bogus".parse::<BoundaryCondition>().is_err());
    }

    #[test]
    fn theta_rejects_non_finite() {
        assert!(Theta::new(vec![0.0, f64::NAN]).is_err());
        assert_eq!(Theta::<f64>::zeros(3).len(), 3);
    }
}
