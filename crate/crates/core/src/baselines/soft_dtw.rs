use super::{check_pair, ground_cost, Frames};
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;
use crate::warping::Signal;

/// `-gamma log(e^{-a/gamma} + e^{-b/gamma} + e^{-c/gamma})`, shifted by the
/// minimum for stability.
fn soft_min<T: Scalar>(a: T, b: T, c: T, gamma: T) -> T {
    let m = a.min(b).min(c);
    if m == T::infinity() {
        return m;
    }
    let s = (-(a - m) / gamma).exp() + (-(b - m) / gamma).exp() + (-(c - m) / gamma).exp();
    m - gamma * s.ln()
}

/// Accumulated soft cost table, `(n + 1) x (m + 1)` with an infinite
/// border except at the origin.
fn forward<T: Scalar>(u: &Frames<T>, w: &Frames<T>, gamma: T) -> (Vec<T>, Vec<T>) {
    let (n, m) = (u.len, w.len);
    let stride = m + 1;
    let mut r = vec![T::infinity(); (n + 1) * stride];
    r[0] = T::zero();
    let mut d = vec![T::zero(); n * m];
    for i in 1..=n {
        for j in 1..=m {
            let cost = ground_cost(u.frame(i - 1), w.frame(j - 1));
            d[(i - 1) * m + j - 1] = cost;
            let prev = (r[(i - 1) * stride + j - 1], r[(i - 1) * stride + j], r[i * stride + j - 1]);
            let best = if gamma == T::zero() { prev.0.min(prev.1).min(prev.2) } else { soft_min(prev.0, prev.1, prev.2, gamma) };
            r[i * stride + j] = cost + best;
        }
    }
    (r, d)
}

fn check_gamma<T: Scalar>(gamma: T) -> Result<()> {
    if !(gamma >= T::zero()) || !gamma.is_finite() {
        return Err(DtanError::invalid(format!("gamma must be a non-negative number, got {gamma}")));
    }
    Ok(())
}

fn soft_dtw_frames<T: Scalar>(u: &Frames<T>, w: &Frames<T>, gamma: T) -> Result<T> {
    check_gamma(gamma)?;
    check_pair(u, w)?;
    let (r, _) = forward(u, w, gamma);
    Ok(r[r.len() - 1])
}

/// Soft-DTW value; `gamma = 0` is the hard DTW cost.
pub fn soft_dtw<T: Scalar>(u: &[T], w: &[T], gamma: T) -> Result<T> {
    soft_dtw_frames(&Frames::from_slice(u), &Frames::from_slice(w), gamma)
}

pub fn soft_dtw_signals<T: Scalar>(u: &Signal<T>, w: &Signal<T>, gamma: T) -> Result<T> {
    soft_dtw_frames(&Frames::from_signal(u), &Frames::from_signal(w), gamma)
}

/// Value and gradient with respect to the first sequence (time-major
/// frames), from the expected-alignment matrix of the backward recursion.
fn value_and_grad<T: Scalar>(u: &Frames<T>, w: &Frames<T>, gamma: T) -> Result<(T, Vec<T>)> {
    if !(gamma > T::zero()) {
        return Err(DtanError::invalid("soft-DTW gradient needs gamma > 0"));
    }
    check_pair(u, w)?;
    let (n, m) = (u.len, w.len);
    let (mut r, d) = forward(u, w, gamma);
    let stride = m + 2;
    // Re-embed into an (n + 2) x (m + 2) table for the backward sweep.
    let mut rr = vec![T::neg_infinity(); (n + 2) * stride];
    for i in 0..=n {
        for j in 0..=m {
            rr[i * stride + j] = r[i * (m + 1) + j];
        }
    }
    let value = rr[n * stride + m];
    rr[(n + 1) * stride + m + 1] = value;
    r.clear();
    let dd = |i: usize, j: usize| if i >= 1 && i <= n && j >= 1 && j <= m { d[(i - 1) * m + j - 1] } else { T::zero() };
    let mut e = vec![T::zero(); (n + 2) * stride];
    e[(n + 1) * stride + m + 1] = T::one();
    for j in (1..=m).rev() {
        for i in (1..=n).rev() {
            let here = rr[i * stride + j];
            let term = |ni: usize, nj: usize| {
                let next = rr[ni * stride + nj];
                if next == T::neg_infinity() {
                    T::zero()
                } else {
                    e[ni * stride + nj] * ((next - here - dd(ni, nj)) / gamma).exp()
                }
            };
            e[i * stride + j] = term(i + 1, j) + term(i, j + 1) + term(i + 1, j + 1);
        }
    }
    let c = u.channels;
    let mut grad = vec![T::zero(); n * c];
    let two = T::lit(2.0);
    for i in 1..=n {
        for j in 1..=m {
            let weight = e[i * stride + j];
            if weight == T::zero() {
                continue;
            }
            for (k, (&a, &b)) in u.frame(i - 1).iter().zip(w.frame(j - 1)).enumerate() {
                grad[(i - 1) * c + k] += weight * two * (a - b);
            }
        }
    }
    Ok((value, grad))
}

/// Soft-DTW value and its gradient with respect to `u`.
pub fn soft_dtw_grad<T: Scalar>(u: &[T], w: &[T], gamma: T) -> Result<(T, Vec<T>)> {
    value_and_grad(&Frames::from_slice(u), &Frames::from_slice(w), gamma)
}

#[derive(Clone, Debug)]
pub struct SoftDtwBarycenter<T> {
    pub barycenter: Signal<T>,
    /// Mean soft-DTW to the ensemble at the start and after every step.
    pub objective_trace: Vec<T>,
}

/// Gradient descent on the mean soft-DTW between the barycenter and the
/// ensemble, starting from `init`.
pub fn soft_dtw_barycenter<T: Scalar>(
    signals: &[Signal<T>],
    init: &Signal<T>,
    gamma: T,
    iters: usize,
    lr: T,
) -> Result<SoftDtwBarycenter<T>> {
    if signals.is_empty() {
        return Err(DtanError::invalid("empty ensemble"));
    }
    if !(gamma > T::zero()) {
        return Err(DtanError::invalid("soft-DTW barycenter needs gamma > 0"));
    }
    let ensemble: Vec<Frames<T>> = signals.iter().map(Frames::from_signal).collect();
    let mut mean = Frames::from_signal(init);
    let scale = T::one() / T::from_usize_lossy(ensemble.len());
    let evaluate = |mean: &Frames<T>| -> Result<(T, Vec<T>)> {
        let mut total = T::zero();
        let mut grad = vec![T::zero(); mean.data.len()];
        for s in &ensemble {
            let (v, g) = value_and_grad(mean, s, gamma)?;
            total += v * scale;
            crate::scalar::axpy(scale, &g, &mut grad);
        }
        if !total.is_finite() {
            return Err(DtanError::Numerical("soft-DTW barycenter objective diverged".into()));
        }
        Ok((total, grad))
    };
    let (mut value, mut grad) = evaluate(&mean)?;
    let mut objective_trace = vec![value];
    for _ in 0..iters {
        crate::scalar::axpy(-lr, &grad, &mut mean.data);
        (value, grad) = evaluate(&mean)?;
        objective_trace.push(value);
    }
    Ok(SoftDtwBarycenter { barycenter: mean.to_signal(), objective_trace })
}
