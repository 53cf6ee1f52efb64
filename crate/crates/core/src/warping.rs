//! Sampling grids, the differentiable linear-interpolation resampler, and
//! chains of successive warps with their backward pass.
//!
//! Signal index `m` in `0..M` sits at unit coordinate `m / (M - 1)`, so a
//! warp of `[0, 1]` acts on any signal length.

use crate::cpab::CpaBasis;
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;

/// Multichannel time series stored channel-major, with an optional
/// validity mask (valid samples form a prefix) and class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal<T> {
    channels: usize,
    len: usize,
    values: Vec<T>,
    mask: Option<Vec<bool>>,
    label: Option<usize>,
}

impl<T: Scalar> Signal<T> {
    /// `values` holds `channels` consecutive rows of equal length.
    pub fn new(channels: usize, values: Vec<T>) -> Result<Self> {
        if channels == 0 || values.is_empty() || values.len() % channels != 0 {
            return Err(DtanError::shape(format!("{} values do not split into {channels} channels", values.len())));
        }
        let len = values.len() / channels;
        Ok(Self { channels, len, values, mask: None, label: None })
    }

    pub fn univariate(values: Vec<T>) -> Result<Self> {
        Self::new(1, values)
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        Self { channels, len, values: vec![T::zero(); channels * len], mask: None, label: None }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.len {
            return Err(DtanError::shape(format!("mask length {} differs from signal length {}", mask.len(), self.len)));
        }
        let valid = mask.iter().take_while(|&&m| m).count();
        if mask[valid..].iter().any(|&m| m) {
            return Err(DtanError::invalid("valid samples must form a prefix"));
        }
        self.mask = if valid == self.len { None } else { Some(mask) };
        Ok(self)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn set_label(&mut self, label: Option<usize>) {
        self.label = label;
    }

    #[inline]
    pub fn is_valid(&self, t: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[t])
    }

    /// Number of valid samples (the whole length when unmasked).
    pub fn valid_len(&self) -> usize {
        self.mask.as_ref().map_or(self.len, |m| m.iter().filter(|&&v| v).count())
    }

    pub(crate) fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.len == other.len
    }

    /// Same data with values converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Signal<U> {
        Signal {
            channels: self.channels,
            len: self.len,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            mask: self.mask.clone(),
            label: self.label,
        }
    }
}

/// `M` evenly spaced points from 0 to 1.
pub fn make_grid<T: Scalar>(m: usize) -> Result<Vec<T>> {
    if m < 2 {
        return Err(DtanError::invalid(format!("grid needs at least 2 points, got {m}")));
    }
    let step = T::one() / T::from_usize_lossy(m - 1);
    let mut grid: Vec<T> = (0..m).map(|i| T::from_usize_lossy(i) * step).collect();
    grid[m - 1] = T::one();
    Ok(grid)
}

/// Interpolation stencil for index coordinate `p` on `len` samples:
/// left node, weight of the right node, and whether `p` lies inside.
#[inline]
fn stencil<T: Scalar>(p: T, len: usize) -> (usize, T, bool) {
    let last = T::from_usize_lossy(len - 1);
    if len == 1 {
        return (0, T::zero(), false);
    }
    if p < T::zero() {
        (0, T::zero(), false)
    } else if p > last {
        (len - 2, T::one(), false)
    } else {
        // Positions within rounding of a node land exactly on it, so the
        // identity grid reproduces the input bit for bit.
        let nearest = p.round();
        let p = if (p - nearest).abs() <= T::lit(4.0) * T::epsilon() * last { nearest } else { p };
        let lo = p.floor().to_usize().unwrap_or(0).min(len - 2);
        (lo, p - T::from_usize_lossy(lo), true)
    }
}

fn check_grid<T: Scalar>(grid: &[T]) -> Result<()> {
    if grid.is_empty() {
        return Err(DtanError::shape("empty sampling grid"));
    }
    match grid.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(DtanError::NonFinite(format!("warped grid entry {i}"))),
        None => Ok(()),
    }
}

/// Samples `u` at the unit-coordinate positions `warped` by linear
/// interpolation; positions outside `[0, 1]` take the edge value.
///
/// The mask, if any, is interpolated with the same weights and kept where
/// the result is at least one half.
pub fn resample<T: Scalar>(u: &Signal<T>, warped: &[T]) -> Result<Signal<T>> {
    check_grid(warped)?;
    let len = u.len;
    let out_len = warped.len();
    let scale = T::from_usize_lossy(len.saturating_sub(1));
    let stencils: Vec<(usize, T, bool)> = warped.iter().map(|&x| stencil(x * scale, len)).collect();
    let mut values = Vec::with_capacity(u.channels * out_len);
    for c in 0..u.channels {
        let row = u.channel(c);
        values.extend(stencils.iter().map(|&(lo, w, _)| {
            if len == 1 {
                row[0]
            } else {
                (T::one() - w) * row[lo] + w * row[lo + 1]
            }
        }));
    }
    let half = T::lit(0.5);
    let mask = u.mask.as_ref().map(|m| {
        let weight = |i: usize| if m[i] { T::one() } else { T::zero() };
        stencils
            .iter()
            .map(|&(lo, w, _)| if len == 1 { m[0] } else { (T::one() - w) * weight(lo) + w * weight(lo + 1) >= half })
            .collect::<Vec<bool>>()
    });
    let mask = mask.and_then(|m| {
        // Interpolating a prefix mask along a monotone grid keeps a prefix;
        // a non-monotone grid may not, so enforce it.
        let valid = m.iter().take_while(|&&v| v).count();
        if valid == out_len {
            None
        } else {
            Some((0..out_len).map(|i| i < valid).collect())
        }
    });
    Ok(Signal { channels: u.channels, len: out_len, values, mask, label: u.label })
}

/// Backward pass of [`resample`].
///
/// Returns the gradient with respect to the values of `u` (channel-major)
/// and with respect to each unit-coordinate grid position. At an integer
/// index position the position derivative is taken from the left-hand
/// interval, except at the first sample where only the right one exists.
pub fn resample_backward<T: Scalar>(u: &Signal<T>, warped: &[T], upstream: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    check_grid(warped)?;
    let out_len = warped.len();
    if upstream.len() != u.channels * out_len {
        return Err(DtanError::shape(format!(
            "upstream has {} entries, expected {}",
            upstream.len(),
            u.channels * out_len
        )));
    }
    let len = u.len;
    let mut grad_u = vec![T::zero(); u.values.len()];
    let mut grad_pos = vec![T::zero(); out_len];
    if len == 1 {
        for c in 0..u.channels {
            grad_u[c] = upstream[c * out_len..(c + 1) * out_len].iter().copied().sum();
        }
        return Ok((grad_u, grad_pos));
    }
    let scale = T::from_usize_lossy(len - 1);
    for (m, &x) in warped.iter().enumerate() {
        let (lo, w, inside) = stencil(x * scale, len);
        let slope_lo = if w == T::zero() && lo > 0 { lo - 1 } else { lo };
        let mut dpos = T::zero();
        for c in 0..u.channels {
            let g = upstream[c * out_len + m];
            let base = c * len;
            grad_u[base + lo] += (T::one() - w) * g;
            grad_u[base + lo + 1] += w * g;
            if inside {
                dpos += g * (u.values[base + slope_lo + 1] - u.values[base + slope_lo]);
            }
        }
        grad_pos[m] = dpos * scale;
    }
    Ok((grad_u, grad_pos))
}

/// `u` composed with `T^theta`: resampled at the warped uniform grid.
pub fn warp_signal<T: Scalar>(basis: &CpaBasis<T>, theta: &[T], u: &Signal<T>) -> Result<Signal<T>> {
    let grid = make_grid(u.len)?;
    let warped = basis.integrate_grid(theta, &grid)?;
    resample(u, &warped)
}

/// One stage of a warp chain: its parameters, the signal it consumed and
/// the warped grid it sampled that signal at.
#[derive(Clone, Debug)]
pub struct WarpStage<T> {
    pub theta: Vec<T>,
    pub input: Signal<T>,
    pub warped_grid: Vec<T>,
}

/// Successive warps `s_r = s_{r-1} o T^{theta_r}`, recorded for the
/// backward pass.
#[derive(Clone, Debug)]
pub struct WarpTrace<T> {
    stages: Vec<WarpStage<T>>,
    output: Signal<T>,
}

impl<T: Scalar> WarpTrace<T> {
    pub fn new(input: Signal<T>) -> Self {
        Self { stages: Vec::new(), output: input }
    }

    /// Applies `thetas` in order to `input`.
    pub fn forward(basis: &CpaBasis<T>, input: &Signal<T>, thetas: &[Vec<T>]) -> Result<Self> {
        let mut trace = Self::new(input.clone());
        for theta in thetas {
            trace.push(basis, theta.clone())?;
        }
        Ok(trace)
    }

    /// Warps the current output by one more stage.
    pub fn push(&mut self, basis: &CpaBasis<T>, theta: Vec<T>) -> Result<()> {
        let grid = make_grid(self.output.len)?;
        let warped_grid = basis.integrate_grid(&theta, &grid)?;
        let next = resample(&self.output, &warped_grid)?;
        let input = std::mem::replace(&mut self.output, next);
        self.stages.push(WarpStage { theta, input, warped_grid });
        Ok(())
    }

    pub fn output(&self) -> &Signal<T> {
        &self.output
    }

    pub fn into_output(self) -> Signal<T> {
        self.output
    }

    pub fn stages(&self) -> &[WarpStage<T>] {
        &self.stages
    }

    pub fn thetas(&self) -> Vec<Vec<T>> {
        self.stages.iter().map(|s| s.theta.clone()).collect()
    }

    /// Backpropagates `upstream` (gradient on the output values) through
    /// every stage, last to first.
    ///
    /// `extra_theta[r]`, when given, is added to stage `r`'s parameter
    /// gradient. `hook(r, grad_theta_r)` runs once the full gradient of stage
    /// `r` is known and may return an additional gradient on that stage's
    /// input, as when the stage parameters were themselves computed from it.
    /// Returns the gradient on the chain input and per-stage parameter
    /// gradients.
    pub fn backward<F>(
        &self,
        basis: &CpaBasis<T>,
        upstream: &[T],
        extra_theta: Option<&[Vec<T>]>,
        mut hook: F,
    ) -> Result<(Vec<T>, Vec<Vec<T>>)>
    where
        F: FnMut(usize, &[T]) -> Result<Option<Vec<T>>>,
    {
        if upstream.len() != self.output.values.len() {
            return Err(DtanError::shape("upstream gradient does not match chain output"));
        }
        let mut grad = upstream.to_vec();
        let mut grad_thetas = vec![Vec::new(); self.stages.len()];
        let grid = make_grid(self.output.len)?;
        for (r, stage) in self.stages.iter().enumerate().rev() {
            let (grad_in, grad_pos) = resample_backward(&stage.input, &stage.warped_grid, &grad)?;
            let mut g_theta = basis.gradient_vjp(&stage.theta, &grid, &grad_pos)?;
            if let Some(extra) = extra_theta {
                crate::scalar::axpy(T::one(), &extra[r], &mut g_theta);
            }
            grad = grad_in;
            if let Some(more) = hook(r, &g_theta)? {
                crate::scalar::axpy(T::one(), &more, &mut grad);
            }
            grad_thetas[r] = g_theta;
        }
        Ok((grad, grad_thetas))
    }
}

/// Pulls `signal` back through the inverse of a forward chain:
/// `signal o T^{-theta_R} o ... o T^{-theta_1}`.
///
/// The returned trace stores the negated parameters in application order;
/// use [`inverse_gradients`] to map its parameter gradients back.
pub fn inverse_chain<T: Scalar>(basis: &CpaBasis<T>, signal: &Signal<T>, thetas: &[Vec<T>]) -> Result<WarpTrace<T>> {
    let negated: Vec<Vec<T>> = thetas.iter().rev().map(|t| t.iter().map(|&v| -v).collect()).collect();
    WarpTrace::forward(basis, signal, &negated)
}

/// Converts parameter gradients of an [`inverse_chain`] trace into
/// gradients with respect to the original forward parameters.
pub fn inverse_gradients<T: Scalar>(grads: Vec<Vec<T>>) -> Vec<Vec<T>> {
    grads.into_iter().rev().map(|g| g.into_iter().map(|v| -v).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Signal<f64> {
        Signal::univariate(vec![0.0, 1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn grid_endpoints_and_spacing() {
        assert_eq!(make_grid::<f64>(2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(make_grid::<f64>(5).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(make_grid::<f64>(1).is_err());
    }

    #[test]
    fn interpolates_and_clamps() {
        let v = resample(&ramp(), &[1.5 / 3.0, -0.7 / 3.0, 4.0 / 3.0]).unwrap();
        assert_eq!(v.values(), &[1.5, 0.0, 3.0]);
    }

    #[test]
    fn identity_grid_is_exact() {
        let u = Signal::new(2, vec![0.3, -1.0, 2.5, 4.0, 1.0, 1.0, 0.0, -3.0]).unwrap();
        let grid = make_grid(4).unwrap();
        assert_eq!(resample(&u, &grid).unwrap().values(), u.values());
        let (gu, _) = resample_backward(&u, &grid, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(gu, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn position_gradient_at_midpoint() {
        let (_, gp) = resample_backward(&ramp(), &[0.5], &[1.0]).unwrap();
        // d/dp is u_2 - u_1 = 1; in unit coordinates multiply by M - 1.
        assert!((gp[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn integer_position_takes_left_interval() {
        let u = Signal::univariate(vec![0.0, 1.0, 5.0]).unwrap();
        let (_, gp) = resample_backward(&u, &[0.0], &[1.0]).unwrap();
        assert_eq!(gp[0], 1.0 * 2.0);
        let (_, gp) = resample_backward(&u, &[0.5], &[1.0]).unwrap();
        assert_eq!(gp[0], 1.0 * 2.0);
        let (_, gp) = resample_backward(&u, &[1.0], &[1.0]).unwrap();
        assert_eq!(gp[0], 4.0 * 2.0);
    }

    #[test]
    fn mask_is_resampled_and_rebinarized() {
        let u = Signal::univariate(vec![1.0, 2.0, 3.0, 0.0]).unwrap().with_mask(vec![true, true, true, false]).unwrap();
        let v = resample(&u, &[0.0, 2.4 / 3.0, 2.6 / 3.0, 1.0]).unwrap();
        assert_eq!(v.mask().unwrap(), &[true, true, false, false]);
    }

    #[test]
    fn mask_must_be_prefix() {
        let u = Signal::univariate(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(u.clone().with_mask(vec![true, false, true]).is_err());
        assert!(u.with_mask(vec![true, true, true]).unwrap().mask().is_none());
    }
}
