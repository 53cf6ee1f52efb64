use nalgebra::{DMatrix, SymmetricEigen};

use crate::cpab::CpaBasis;
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;
use crate::warping::{inverse_chain, Signal};

/// Principal components of a mean-centered ensemble.
///
/// Signals are flattened channel-major into the rows of `X`, and
/// `X - mean = U diag(s) V^T`.
#[derive(Clone, Debug)]
pub struct PcaResult<T> {
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `s_i^2 / sum_j s_j^2`.
    pub explained: Vec<f64>,
    pub mean: Signal<T>,
    /// Rows of `U diag(s)`: coordinates of each signal in the component
    /// basis.
    pub scores: Vec<Vec<f64>>,
    /// Rows of `V^T`: unit-norm loadings (zero for vanishing singular
    /// values).
    pub components: Vec<Vec<f64>>,
    /// Reconstruction of every signal from the first `k` components.
    pub reconstructions: Vec<Signal<T>>,
    /// Reconstructions carried back through the inverse of each signal's
    /// warp chain, when warps were given.
    pub unwarped: Option<Vec<Signal<T>>>,
}

impl<T> PcaResult<T> {
    /// Running sum of the explained-variance ratios.
    pub fn cumulative_explained(&self) -> Vec<f64> {
        self.explained
            .iter()
            .scan(0.0, |acc, &e| {
                *acc += e;
                Some(*acc)
            })
            .collect()
    }
}

/// PCA of `signals` with `k`-component reconstructions.
///
/// `warps` pairs the basis with each signal's warp chain (as returned by
/// alignment); reconstructions are then also unwarped.
pub fn pca_aligned<T: Scalar>(
    signals: &[Signal<T>],
    warps: Option<(&CpaBasis<T>, &[Vec<Vec<T>>])>,
    k: usize,
) -> Result<PcaResult<T>> {
    let first = signals.first().ok_or_else(|| DtanError::invalid("empty ensemble"))?;
    if signals.iter().any(|s| !s.same_shape(first)) {
        return Err(DtanError::shape("PCA signals must share channels and length"));
    }
    let (n, dim) = (signals.len(), first.values().len());
    if k == 0 || k > n.min(dim) {
        return Err(DtanError::invalid(format!("k = {k} outside 1..={}", n.min(dim))));
    }
    if let Some((_, thetas)) = warps {
        if thetas.len() != n {
            return Err(DtanError::shape(format!("{} warp chains for {n} signals", thetas.len())));
        }
    }
    let x = DMatrix::from_fn(n, dim, |i, j| signals[i].values()[j].as_f64());
    let mean: Vec<f64> = (0..dim).map(|j| x.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
    let r = n.min(dim);
    // Eigendecomposition of the smaller Gram matrix; `proj` holds the
    // projections onto the eigenvectors, so summing all of them reproduces
    // the data exactly even for rank-deficient ensembles.
    let (vectors, values, proj) = if n <= dim {
        let eig = SymmetricEigen::new(&centered * centered.transpose());
        let proj = eig.eigenvectors.transpose() * &centered;
        (eig.eigenvectors, eig.eigenvalues, proj)
    } else {
        let eig = SymmetricEigen::new(centered.transpose() * &centered);
        let proj = &centered * &eig.eigenvectors;
        (eig.eigenvectors, eig.eigenvalues, proj)
    };
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| values[i].max(0.0).sqrt()).collect();
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return Err(DtanError::invalid("ensemble has no variance"));
    }
    let explained = singular_values.iter().map(|s| s * s / total).collect();
    let tol = singular_values[0] * f64::EPSILON * n.max(dim) as f64;
    let (scores, components): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if n <= dim {
        let scores = (0..n).map(|i| order.iter().zip(&singular_values).map(|(&c, s)| vectors[(i, c)] * s).collect()).collect();
        let components = order
            .iter()
            .zip(&singular_values)
            .map(|(&c, &s)| proj.row(c).iter().map(|&p| if s > tol { p / s } else { 0.0 }).collect())
            .collect();
        (scores, components)
    } else {
        let scores = (0..n).map(|i| order.iter().map(|&c| proj[(i, c)]).collect()).collect();
        let components = order.iter().map(|&c| vectors.column(c).iter().copied().collect()).collect();
        (scores, components)
    };

    let to_signal = |values: Vec<f64>, like: &Signal<T>| -> Result<Signal<T>> {
        let s = Signal::new(like.channels(), values.into_iter().map(T::lit).collect())?;
        match like.mask() {
            Some(m) => s.with_mask(m.to_vec()),
            None => Ok(s),
        }
    };
    let reconstructions = (0..n)
        .map(|i| {
            let mut v = mean.clone();
            for &c in &order[..k] {
                if n <= dim {
                    let a = vectors[(i, c)];
                    v.iter_mut().zip(proj.row(c).iter()).for_each(|(x, &p)| *x += a * p);
                } else {
                    let a = proj[(i, c)];
                    v.iter_mut().zip(vectors.column(c).iter()).for_each(|(x, &e)| *x += a * e);
                }
            }
            to_signal(v, &signals[i])
        })
        .collect::<Result<Vec<_>>>()?;
    let unwarped = warps
        .map(|(basis, thetas)| {
            reconstructions
                .iter()
                .zip(thetas)
                .map(|(r, th)| Ok(inverse_chain(basis, r, th)?.into_output()))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok(PcaResult {
        singular_values,
        explained,
        mean: Signal::new(first.channels(), mean.into_iter().map(T::lit).collect())?,
        scores,
        components,
        reconstructions,
        unwarped,
    })
}
