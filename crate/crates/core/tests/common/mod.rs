#![allow(dead_code)]

use dtan_core::cpab::{BoundaryCondition, CpaBasis, Tessellation};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const BOUNDARIES: [BoundaryCondition; 3] =
    [BoundaryCondition::Free, BoundaryCondition::ZeroBoundary, BoundaryCondition::Circular];

pub fn basis(n_cells: usize, bc: BoundaryCondition) -> CpaBasis<f64> {
    CpaBasis::new(&Tessellation::new(n_cells, bc).unwrap()).unwrap()
}

/// Every supported (cell count, boundary) pair among the given cell counts.
pub fn configurations(cells: &[usize]) -> Vec<(usize, BoundaryCondition)> {
    let mut out = Vec::new();
    for &n in cells {
        for bc in BOUNDARIES {
            if bc == BoundaryCondition::ZeroBoundary && n < 2 {
                continue;
            }
            out.push((n, bc));
        }
    }
    out
}

/// Random direction with norm drawn uniformly from `[0, max_norm]`.
pub fn random_theta<R: Rng>(rng: &mut R, dim: usize, max_norm: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = rng.random_range(0.0..=max_norm);
    v.iter_mut().for_each(|x| *x *= r / norm);
    v
}

/// Velocity of the field extended beyond `[0, 1]` the same way the
/// integrator extends it: periodically for circular fields, by the outer
/// cells' affine pieces otherwise.
pub fn extended_velocity(basis: &CpaBasis<f64>, coeffs: &[(f64, f64)], x: f64) -> f64 {
    let n = coeffs.len();
    let circular = basis.tessellation().boundary() == BoundaryCondition::Circular;
    let local = if circular { x - x.floor() } else { x };
    let cell = ((local * n as f64).floor().max(0.0) as usize).min(n - 1);
    let (a, b) = coeffs[cell];
    a * local + b
}

/// Fixed-step classical Runge-Kutta integration for unit time.
pub fn rk4(basis: &CpaBasis<f64>, theta: &[f64], x: f64, steps: usize) -> f64 {
    let field = basis.field(theta).unwrap();
    let coeffs = field.coeffs();
    let h = 1.0 / steps as f64;
    let v = |y: f64| extended_velocity(basis, coeffs, y);
    let mut y = x;
    for _ in 0..steps {
        let k1 = v(y);
        let k2 = v(y + 0.5 * h * k1);
        let k3 = v(y + 0.5 * h * k2);
        let k4 = v(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

pub fn central_difference(basis: &CpaBasis<f64>, theta: &[f64], x: f64, h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|j| {
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[j] += h;
            minus[j] -= h;
            (basis.integrate(&plus, x).unwrap() - basis.integrate(&minus, x).unwrap()) / (2.0 * h)
        })
        .collect()
}

/// Largest per-entry error; entries whose magnitude is below `floor` are
/// compared absolutely, the rest relatively.
pub fn max_mixed_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if a.abs() < floor {
                diff
            } else {
                diff / a.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Minimum DTW cost over every monotone path, summed from the start of the
/// path in the same order as a forward recursion.
pub fn brute_force_dtw(u: &[f64], w: &[f64]) -> f64 {
    fn walk(u: &[f64], w: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (u[i] - w[j]) * (u[i] - w[j]);
        if i + 1 == u.len() && j + 1 == w.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < u.len() && j + 1 < w.len() {
            walk(u, w, i + 1, j + 1, acc, best);
        }
        if i + 1 < u.len() {
            walk(u, w, i + 1, j, acc, best);
        }
        if j + 1 < w.len() {
            walk(u, w, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(u, w, 0, 0, 0.0, &mut best);
    best
}

/// Plain DBA on univariate sequences: full cost table, backtracking with
/// the diagonal preferred over the step in the first index, then the
/// second. Returns the total cost before each update and after the last.
pub fn naive_dba(ensemble: &[Vec<f64>], init: &[f64], iters: usize) -> Vec<f64> {
    fn align(mean: &[f64], s: &[f64]) -> (f64, Vec<(usize, usize)>) {
        let (n, m) = (mean.len(), s.len());
        let mut d = vec![vec![f64::INFINITY; m + 1]; n + 1];
        d[0][0] = 0.0;
        for i in 1..=n {
            for j in 1..=m {
                let c = (mean[i - 1] - s[j - 1]).powi(2);
                let prev = if i == 1 && j == 1 { 0.0 } else { d[i - 1][j - 1].min(d[i - 1][j]).min(d[i][j - 1]) };
                d[i][j] = c + prev;
            }
        }
        let mut path = vec![(n - 1, m - 1)];
        let (mut i, mut j) = (n, m);
        while (i, j) != (1, 1) {
            let (a, b, c) = (d[i - 1][j - 1], d[i - 1][j], d[i][j - 1]);
            if a <= b && a <= c {
                i -= 1;
                j -= 1;
            } else if b <= c {
                i -= 1;
            } else {
                j -= 1;
            }
            path.push((i - 1, j - 1));
        }
        (d[n][m], path)
    }
    let mut mean = init.to_vec();
    let mut trace = Vec::new();
    let cost_of = |mean: &[f64]| ensemble.iter().map(|s| align(mean, s).0).sum::<f64>();
    trace.push(cost_of(&mean));
    for _ in 0..iters {
        let mut sum = vec![0.0; mean.len()];
        let mut count = vec![0usize; mean.len()];
        for s in ensemble {
            for (i, j) in align(&mean, s).1 {
                sum[i] += s[j];
                count[i] += 1;
            }
        }
        let next: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        let c = cost_of(&next);
        if c <= *trace.last().unwrap() {
            mean = next;
        }
        trace.push(cost_of(&mean));
    }
    trace
}

/// Direct evaluation of the linear-kernel sum at index coordinate `p`, with
/// out-of-range positions moved to the nearest end.
pub fn kernel_sum(u: &[f64], p: f64) -> f64 {
    let p = p.clamp(0.0, (u.len() - 1) as f64);
    u.iter().enumerate().map(|(m, &v)| v * (1.0 - (p - m as f64).abs()).max(0.0)).sum()
}

/// Smooth band-limited test signal of length `m`.
pub fn bandlimited(m: usize, phase: f64) -> Vec<f64> {
    (0..m)
        .map(|t| {
            let x = t as f64 / (m - 1) as f64;
            (std::f64::consts::TAU * x + phase).sin() + 0.5 * (2.0 * std::f64::consts::TAU * x).cos()
        })
        .collect()
}
