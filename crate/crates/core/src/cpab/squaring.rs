use super::VelocityField;
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;

/// Approximates `T(x)` on `grid` by scaling and squaring.
///
/// The flow for time `2^-k` is approximated by one explicit Euler step on a
/// dense uniform lattice over `[0, 1]`, then composed with itself `k` times
/// via linear interpolation of the displacement (constant extrapolation
/// outside the lattice). Exact integration is the reference path; this
/// exists for comparison with libraries that use squaring.
pub fn integrate_grid_squaring<T: Scalar>(
    field: &VelocityField<T>,
    grid: &[T],
    squarings: u32,
    lattice: usize,
) -> Result<Vec<T>> {
    if lattice < 2 {
        return Err(DtanError::invalid("squaring lattice needs at least two points"));
    }
    if squarings > 30 {
        return Err(DtanError::invalid("too many squarings"));
    }
    let step = T::one() / T::from_usize_lossy(lattice - 1);
    let h = T::one() / T::lit(2f64.powi(squarings as i32));
    let mut disp: Vec<T> = (0..lattice)
        .map(|i| {
            let x = T::from_usize_lossy(i) * step;
            field.velocity(x).map(|v| v * h)
        })
        .collect::<Result<_>>()?;
    let lookup = |disp: &[T], x: T| -> T {
        let p = x / step;
        if p <= T::zero() {
            return disp[0];
        }
        let last = lattice - 1;
        if p >= T::from_usize_lossy(last) {
            return disp[last];
        }
        let i = p.floor().to_usize().unwrap_or(0).min(last - 1);
        let f = p - T::from_usize_lossy(i);
        disp[i] * (T::one() - f) + disp[i + 1] * f
    };
    for _ in 0..squarings {
        let next: Vec<T> = (0..lattice)
            .map(|i| {
                let x = T::from_usize_lossy(i) * step;
                let d = disp[i];
                d + lookup(&disp, x + d)
            })
            .collect();
        disp = next;
    }
    Ok(grid.iter().map(|&x| x + lookup(&disp, x)).collect())
}
