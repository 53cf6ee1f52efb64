use super::{BoundaryCondition, Tessellation, HOPS_PER_CELL, LINEAR_BRANCH_EPS};
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;

/// A CPA field given by its per-cell affine coefficients `(a_c, b_c)`.
///
/// Outside `[0, 1]` the first and last cells extend to infinity, except for
/// circular fields, which repeat with period one.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField<T> {
    tess: Tessellation,
    coeffs: Vec<(T, T)>,
}

/// A boundary crossing recorded while tracing a trajectory.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Crossing<T> {
    cell: usize,
    start: T,
    time: T,
    boundary_velocity: T,
}

#[derive(Clone, Copy, Debug)]
struct TraceEnd<T> {
    value: T,
    /// End point in the coordinates of its period.
    local: T,
    cell: usize,
    start: T,
    time: T,
}

#[derive(Clone, Copy, Debug)]
struct Position<T> {
    /// Integer period offset (circular fields only; zero otherwise).
    offset: T,
    local: T,
    cell: usize,
}

impl<T: Scalar> VelocityField<T> {
    pub fn from_coeffs(tess: Tessellation, coeffs: Vec<(T, T)>) -> Self {
        assert_eq!(coeffs.len(), tess.n_cells(), "one coefficient pair per cell");
        Self { tess, coeffs }
    }

    pub fn coeffs(&self) -> &[(T, T)] {
        &self.coeffs
    }

    pub fn tessellation(&self) -> &Tessellation {
        &self.tess
    }

    pub(crate) fn negate(&mut self) {
        for (a, b) in &mut self.coeffs {
            *a = -*a;
            *b = -*b;
        }
    }

    /// Field value at `x` in `[0, 1]`.
    pub fn velocity(&self, x: T) -> Result<T> {
        if !(x >= T::zero() && x <= T::one()) {
            return Err(DtanError::invalid(format!("velocity queried outside [0, 1] at {x}")));
        }
        let (a, b) = self.coeffs[self.tess.cell_index(x)];
        Ok(a * x + b)
    }

    fn last(&self) -> usize {
        self.coeffs.len() - 1
    }

    fn circular(&self) -> bool {
        self.tess.boundary() == BoundaryCondition::Circular
    }

    fn locate(&self, x: T) -> Position<T> {
        if self.circular() {
            let offset = x.floor();
            let local = x - offset;
            Position { offset, local, cell: self.tess.cell_index(local) }
        } else {
            let cell = if x <= T::zero() {
                0
            } else if x >= T::one() {
                self.last()
            } else {
                self.tess.cell_index(x)
            };
            Position { offset: T::zero(), local: x, cell }
        }
    }

    /// Left and right ends of a cell; unbounded for the outer cells of
    /// non-circular fields.
    fn cell_bounds(&self, cell: usize) -> (Option<T>, Option<T>) {
        let circular = self.circular();
        let left = if cell == 0 && !circular { None } else { Some(self.tess.vertex(cell)) };
        let right = if cell == self.last() && !circular { None } else { Some(self.tess.vertex(cell + 1)) };
        (left, right)
    }

    fn is_pinned(&self, x: T) -> bool {
        self.tess.boundary() == BoundaryCondition::ZeroBoundary && (x == T::zero() || x == T::one())
    }

    /// Traces the trajectory of `x` for unit time, appending every cell
    /// crossing to `crossings`.
    fn trace(&self, x: T, crossings: &mut Vec<Crossing<T>>) -> Result<TraceEnd<T>> {
        if !x.is_finite() {
            return Err(DtanError::NonFinite(format!("integration start point {x}")));
        }
        crossings.clear();
        let mut pos = self.locate(x);
        let mut t = T::one();
        let max_hops = HOPS_PER_CELL * self.coeffs.len();
        loop {
            let (a, b) = self.coeffs[pos.cell];
            let v = a * pos.local + b;
            if v == T::zero() {
                return Ok(TraceEnd { value: pos.offset + pos.local, local: pos.local, cell: pos.cell, start: pos.local, time: t });
            }
            let (left, right) = self.cell_bounds(pos.cell);
            let boundary = if v > T::zero() { right } else { left };
            if let Some(xc) = boundary {
                let vc = a * xc + b;
                if vc * v > T::zero() {
                    let hit = hit_time(a, b, pos.local, xc);
                    if hit < t {
                        crossings.push(Crossing { cell: pos.cell, start: pos.local, time: hit, boundary_velocity: vc });
                        if crossings.len() > max_hops {
                            return Err(DtanError::Numerical(format!(
                                "trajectory from {x} exceeded {max_hops} cell crossings"
                            )));
                        }
                        t -= hit;
                        pos = self.step_across(pos, v > T::zero(), xc);
                        continue;
                    }
                }
            }
            let mut psi = flow(pos.local, t, a, b);
            if let Some(l) = left {
                psi = psi.max(l);
            }
            if let Some(r) = right {
                psi = psi.min(r);
            }
            return Ok(TraceEnd { value: pos.offset + psi, local: psi, cell: pos.cell, start: pos.local, time: t });
        }
    }

    fn step_across(&self, pos: Position<T>, rightward: bool, xc: T) -> Position<T> {
        let last = self.last();
        if rightward {
            if pos.cell == last {
                Position { offset: pos.offset + T::one(), local: T::zero(), cell: 0 }
            } else {
                Position { offset: pos.offset, local: xc, cell: pos.cell + 1 }
            }
        } else if pos.cell == 0 {
            Position { offset: pos.offset - T::one(), local: T::one(), cell: last }
        } else {
            Position { offset: pos.offset, local: xc, cell: pos.cell - 1 }
        }
    }

    /// `T(x)`: the flow of `x` at time one.
    pub fn integrate(&self, x: T) -> Result<T> {
        if self.is_pinned(x) {
            return Ok(x);
        }
        let mut crossings = Vec::new();
        Ok(self.trace(x, &mut crossings)?.value)
    }

    pub fn integrate_grid(&self, grid: &[T]) -> Result<Vec<T>> {
        let mut crossings = Vec::new();
        grid.iter()
            .map(|&x| if self.is_pinned(x) { Ok(x) } else { Ok(self.trace(x, &mut crossings)?.value) })
            .collect()
    }

    /// Integrates `x` and accumulates `dT(x)/d(a_c, b_c)` into `cell_grad`.
    ///
    /// The final position is `psi(x_n, t_n)` in the last visited cell with
    /// `t_n = 1 - sum_k tau_k`; each hitting time `tau_k` depends on the
    /// coefficients of the cell it was spent in, and by implicit
    /// differentiation of `psi(x_k, tau_k) = boundary`,
    /// `d tau_k / dp = -dpsi/dp(x_k, tau_k) / v(boundary)`.
    pub(crate) fn integrate_with_cell_gradient(
        &self,
        x: T,
        cell_grad: &mut [(T, T)],
        crossings: &mut Vec<Crossing<T>>,
    ) -> Result<T> {
        if self.is_pinned(x) {
            return Ok(x);
        }
        let end = self.trace(x, crossings)?;
        let (a, b) = self.coeffs[end.cell];
        let v_end = a * end.local + b;
        let (da, db) = flow_partials(end.start, end.time, a, b);
        cell_grad[end.cell].0 += da;
        cell_grad[end.cell].1 += db;
        for c in crossings.iter() {
            let (ca, cb) = self.coeffs[c.cell];
            let (pa, pb) = flow_partials(c.start, c.time, ca, cb);
            let w = v_end / c.boundary_velocity;
            cell_grad[c.cell].0 += w * pa;
            cell_grad[c.cell].1 += w * pb;
        }
        Ok(end.value)
    }
}

/// Closed-form flow of `dx/dt = a x + b` for time `t` from `x`.
#[inline]
pub(crate) fn flow<T: Scalar>(x: T, t: T, a: T, b: T) -> T {
    if a.abs() < T::lit(LINEAR_BRANCH_EPS) {
        let at = a * t;
        x + x * at + b * t * (T::one() + at * T::lit(0.5))
    } else {
        let at = a * t;
        x * at.exp() + b * at.exp_m1() / a
    }
}

/// `expm1(z) / z`.
#[inline]
fn phi1<T: Scalar>(z: T) -> T {
    if z.abs() < T::lit(LINEAR_BRANCH_EPS) {
        T::one() + z * T::lit(0.5)
    } else {
        z.exp_m1() / z
    }
}

/// `(z e^z - expm1(z)) / z^2`, the derivative of `phi1` times `z`-scaling.
#[inline]
fn phi2<T: Scalar>(z: T) -> T {
    if z.abs() < T::lit(1e-2) {
        // sum_{k>=1} k z^{k-1} / (k+1)!
        let c = [1.0 / 2.0, 1.0 / 3.0, 1.0 / 8.0, 1.0 / 30.0, 1.0 / 144.0, 1.0 / 840.0];
        c.iter().rev().fold(T::zero(), |acc, &ck| acc * z + T::lit(ck))
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

/// Partial derivatives of `flow(x, t, a, b)` with respect to `a` and `b`.
#[inline]
pub(crate) fn flow_partials<T: Scalar>(x: T, t: T, a: T, b: T) -> (T, T) {
    let z = a * t;
    let da = x * t * z.exp() + b * t * t * phi2(z);
    let db = t * phi1(z);
    (da, db)
}

/// Time for the flow from `x` to reach `xc`, assuming the velocities at
/// both points are non-zero and share a sign.
#[inline]
pub(crate) fn hit_time<T: Scalar>(a: T, b: T, x: T, xc: T) -> T {
    let v = a * x + b;
    let delta = xc - x;
    if a.abs() < T::lit(LINEAR_BRANCH_EPS) {
        delta / v * (T::one() - a * delta / (T::lit(2.0) * v))
    } else {
        (a * delta / v).ln_1p() / a
    }
}
