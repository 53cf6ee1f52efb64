//! Joint-alignment objectives and their gradients.
//!
//! A batch consists of original signals `u_i`, their per-stage warp
//! parameters `theta_{i,1..R}`, the chain outputs `v_i` and class labels.
//! Evaluating a loss yields its value, the gradient on every `v_i`, and the
//! gradient that reaches each `theta_{i,r}` directly (through inverse warps
//! or the prior term). [`loss_gradients`] chains all of it down to the
//! parameters.

use std::fmt;
use std::str::FromStr;

use crate::cpab::{CpaBasis, PriorCovariance};
use crate::error::{DtanError, Result};
use crate::scalar::{axpy, Scalar};
use crate::warping::{inverse_chain, inverse_gradients, Signal, WarpTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Within-class sum of squares of the aligned signals.
    Wcss,
    /// WCSS plus the CPA smoothness prior on every warp.
    WcssReg,
    /// Inverse-consistency averaging error.
    Icae,
    /// ICAE plus the inverse-consistent centroid triplet hinge.
    IcaeTriplet,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Wcss => "wcss",
            Self::WcssReg => "wcss_reg",
            Self::Icae => "icae",
            Self::IcaeTriplet => "icae_triplet",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Self::Wcss => 0,
            Self::WcssReg => 1,
            Self::Icae => 2,
            Self::IcaeTriplet => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Wcss,
            1 => Self::WcssReg,
            2 => Self::Icae,
            3 => Self::IcaeTriplet,
            _ => return None,
        })
    }

    /// Whether the loss needs at least two classes to be meaningful.
    pub fn uses_negatives(self) -> bool {
        self == Self::IcaeTriplet
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = DtanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wcss" => Ok(Self::Wcss),
            "wcss_reg" => Ok(Self::WcssReg),
            "icae" => Ok(Self::Icae),
            "icae_triplet" => Ok(Self::IcaeTriplet),
            other => Err(DtanError::invalid(format!("unknown loss kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda_sigma: f64,
    pub lambda_smooth: f64,
    /// Triplet margin.
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { kind: LossKind::Icae, lambda_sigma: 1e-3, lambda_smooth: 0.1, margin: 1.0 }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(DtanError::invalid(format!("margin must be non-negative, got {}", self.margin)));
        }
        if self.kind == LossKind::WcssReg && !(self.lambda_sigma > 0.0 && self.lambda_smooth > 0.0) {
            return Err(DtanError::invalid("wcss_reg needs positive lambda_sigma and lambda_smooth"));
        }
        Ok(())
    }
}

/// Mean of one class over aligned signals, per timestep over the members
/// valid there.
#[derive(Clone, Debug)]
pub struct Centroid<T> {
    /// Masked where no member is valid.
    pub mean: Signal<T>,
    /// Valid member count per timestep.
    pub counts: Vec<usize>,
    /// Number of members.
    pub size: usize,
}

/// Centroids indexed by class id; `None` for ids absent from the batch.
#[derive(Clone, Debug)]
pub struct ClassCentroids<T> {
    pub classes: Vec<Option<Centroid<T>>>,
}

impl<T: Scalar> ClassCentroids<T> {
    pub fn get(&self, class: usize) -> Option<&Centroid<T>> {
        self.classes.get(class).and_then(Option::as_ref)
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, &Centroid<T>)> {
        self.classes.iter().enumerate().filter_map(|(k, c)| c.as_ref().map(|c| (k, c)))
    }
}

fn check_batch<T: Scalar>(signals: &[Signal<T>], labels: &[usize]) -> Result<()> {
    if signals.is_empty() {
        return Err(DtanError::invalid("empty batch"));
    }
    if labels.len() != signals.len() {
        return Err(DtanError::shape(format!("{} labels for {} signals", labels.len(), signals.len())));
    }
    if signals.iter().any(|s| !s.same_shape(&signals[0])) {
        return Err(DtanError::shape("signals in a batch must share channels and length"));
    }
    Ok(())
}

/// Per-class, per-timestep masked means.
pub fn class_means<T: Scalar>(aligned: &[Signal<T>], labels: &[usize]) -> Result<ClassCentroids<T>> {
    check_batch(aligned, labels)?;
    let n_classes = labels.iter().max().map_or(0, |&k| k + 1);
    let (channels, len) = (aligned[0].channels(), aligned[0].len());
    let mut sums: Vec<Option<(Vec<T>, Vec<usize>, usize)>> = vec![None; n_classes];
    for (s, &k) in aligned.iter().zip(labels) {
        let (sum, counts, size) = sums[k].get_or_insert_with(|| (vec![T::zero(); channels * len], vec![0; len], 0));
        *size += 1;
        for t in 0..len {
            if s.is_valid(t) {
                counts[t] += 1;
                for c in 0..channels {
                    sum[c * len + t] += s.values()[c * len + t];
                }
            }
        }
    }
    let classes = sums
        .into_iter()
        .map(|entry| {
            entry.map(|(mut sum, counts, size)| {
                for t in 0..len {
                    for c in 0..channels {
                        sum[c * len + t] = if counts[t] > 0 {
                            sum[c * len + t] / T::from_usize_lossy(counts[t])
                        } else {
                            T::zero()
                        };
                    }
                }
                let mask = counts.iter().map(|&n| n > 0).collect();
                let mean = Signal::new(channels, sum).and_then(|s| s.with_mask(mask));
                mean.map(|mean| Centroid { mean, counts, size })
            })
            .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassCentroids { classes })
}

/// `sum_k (1/N_k) sum_{i in k} ||v_i - mu_k||^2` over valid timesteps.
pub fn wcss<T: Scalar>(aligned: &[Signal<T>], labels: &[usize], centroids: &ClassCentroids<T>) -> Result<T> {
    check_batch(aligned, labels)?;
    let mut total = T::zero();
    for (s, &k) in aligned.iter().zip(labels) {
        let cen = centroids.get(k).ok_or(DtanError::EmptyClass(k))?;
        if !s.same_shape(&cen.mean) {
            return Err(DtanError::shape("centroid shape differs from signal"));
        }
        total += masked_sq_dist(s, &cen.mean) / T::from_usize_lossy(cen.size);
    }
    Ok(total)
}

/// Squared distance over timesteps valid in both signals.
fn masked_sq_dist<T: Scalar>(a: &Signal<T>, b: &Signal<T>) -> T {
    let len = a.len();
    let mut total = T::zero();
    for t in (0..len).filter(|&t| a.is_valid(t) && b.is_valid(t)) {
        for c in 0..a.channels() {
            let d = a.values()[c * len + t] - b.values()[c * len + t];
            total += d * d;
        }
    }
    total
}

/// Adds `scale * (a - b)` to `out` over timesteps valid in both.
fn add_masked_diff<T: Scalar>(a: &Signal<T>, b: &Signal<T>, scale: T, out: &mut [T]) {
    let len = a.len();
    for t in (0..len).filter(|&t| a.is_valid(t) && b.is_valid(t)) {
        for c in 0..a.channels() {
            let i = c * len + t;
            out[i] += scale * (a.values()[i] - b.values()[i]);
        }
    }
}

/// `sum_i theta_i^T Sigma^{-1} theta_i`.
pub fn cpa_regularizer<T: Scalar>(thetas: &[Vec<T>], prior: &PriorCovariance<T>) -> Result<T> {
    thetas.iter().try_fold(T::zero(), |acc, th| Ok(acc + prior.quadratic_form(th)?))
}

/// Inverse-consistency averaging error for single-stage warps.
pub fn icae<T: Scalar>(originals: &[Signal<T>], thetas: &[Vec<T>], labels: &[usize], basis: &CpaBasis<T>) -> Result<T> {
    let stages: Vec<Vec<Vec<T>>> = thetas.iter().map(|t| vec![t.clone()]).collect();
    let config = LossConfig::new(LossKind::Icae);
    Ok(batch_loss(&config, basis, None, originals, &stages, labels)?.value)
}

/// Triplet hinge for one anchor: both centroids are pulled back with the
/// same inverse warp and compared to the anchor by squared distance.
pub fn icae_triplet<T: Scalar>(
    anchor: &Signal<T>,
    mu_p: &Signal<T>,
    mu_n: &Signal<T>,
    theta: &[T],
    basis: &CpaBasis<T>,
    alpha: T,
) -> Result<T> {
    if !anchor.same_shape(mu_p) || !anchor.same_shape(mu_n) {
        return Err(DtanError::shape("anchor and centroids must share shape"));
    }
    let stages = [theta.to_vec()];
    let back_p = inverse_chain(basis, mu_p, &stages)?;
    let back_n = inverse_chain(basis, mu_n, &stages)?;
    let d_p = masked_sq_dist(anchor, back_p.output());
    let d_n = masked_sq_dist(anchor, back_n.output());
    Ok((d_p - d_n + alpha).max(T::zero()))
}

/// Loss value with the gradient on each chain output and the gradient that
/// reaches each stage parameter without passing through the outputs.
#[derive(Clone, Debug)]
pub struct LossEval<T> {
    pub value: T,
    pub grad_outputs: Vec<Vec<T>>,
    pub grad_thetas: Vec<Vec<Vec<T>>>,
}

/// Evaluates the configured loss on chain outputs.
///
/// `thetas[i]` lists sample `i`'s stage parameters in application order and
/// `outputs[i]` is `originals[i]` warped through all of them.
pub fn evaluate<T: Scalar>(
    config: &LossConfig,
    basis: &CpaBasis<T>,
    prior: Option<&PriorCovariance<T>>,
    originals: &[Signal<T>],
    outputs: &[Signal<T>],
    thetas: &[Vec<Vec<T>>],
    labels: &[usize],
) -> Result<LossEval<T>> {
    config.validate()?;
    check_batch(outputs, labels)?;
    if originals.len() != outputs.len() || thetas.len() != outputs.len() {
        return Err(DtanError::shape("originals, outputs and thetas must have one entry per sample"));
    }
    let n = outputs.len();
    let centroids = class_means(outputs, labels)?;
    let mut grad_outputs: Vec<Vec<T>> = outputs.iter().map(|s| vec![T::zero(); s.values().len()]).collect();
    let mut grad_thetas: Vec<Vec<Vec<T>>> =
        thetas.iter().map(|st| st.iter().map(|t| vec![T::zero(); t.len()]).collect()).collect();
    let two = T::lit(2.0);
    let mut value = T::zero();

    match config.kind {
        LossKind::Wcss | LossKind::WcssReg => {
            // The centroid path drops out: the per-class residuals sum to
            // zero at every valid timestep.
            for i in 0..n {
                let cen = centroids.get(labels[i]).ok_or(DtanError::EmptyClass(labels[i]))?;
                let inv_n = T::one() / T::from_usize_lossy(cen.size);
                value += masked_sq_dist(&outputs[i], &cen.mean) * inv_n;
                add_masked_diff(&outputs[i], &cen.mean, two * inv_n, &mut grad_outputs[i]);
            }
        }
        LossKind::Icae | LossKind::IcaeTriplet => {
            let margin = T::lit(config.margin);
            let n_classes = centroids.classes.len();
            let mut grad_means: Vec<Vec<T>> = centroids
                .classes
                .iter()
                .map(|c| c.as_ref().map_or_else(Vec::new, |c| vec![T::zero(); c.mean.values().len()]))
                .collect();
            for i in 0..n {
                let k = labels[i];
                let cen = centroids.get(k).ok_or(DtanError::EmptyClass(k))?;
                let inv_n = T::one() / T::from_usize_lossy(cen.size);
                let u = &originals[i];
                let back = |class: usize| -> Result<WarpTrace<T>> {
                    inverse_chain(basis, &centroids.classes[class].as_ref().expect("present class").mean, &thetas[i])
                };
                // weight * ||u - back_k||^2 contributes through back_k's trace.
                let mut pull = |class: usize, trace: &WarpTrace<T>, weight: T| -> Result<()> {
                    let mut upstream = vec![T::zero(); u.values().len()];
                    add_masked_diff(trace.output(), u, two * weight, &mut upstream);
                    let (g_mean, g_inv) = trace.backward(basis, &upstream, None, |_, _| Ok(None))?;
                    axpy(T::one(), &g_mean, &mut grad_means[class]);
                    for (acc, g) in grad_thetas[i].iter_mut().zip(inverse_gradients(g_inv)) {
                        axpy(T::one(), &g, acc);
                    }
                    Ok(())
                };
                let positive = back(k)?;
                let d_p = masked_sq_dist(u, positive.output());
                value += d_p * inv_n;
                let mut weight_p = inv_n;
                if config.kind == LossKind::IcaeTriplet {
                    let mut nearest: Option<(usize, T, WarpTrace<T>)> = None;
                    for other in (0..n_classes).filter(|&c| c != k && centroids.get(c).is_some()) {
                        let trace = back(other)?;
                        let d = masked_sq_dist(u, trace.output());
                        if nearest.as_ref().is_none_or(|(_, best, _)| d < *best) {
                            nearest = Some((other, d, trace));
                        }
                    }
                    if let Some((neg, d_n, trace)) = nearest {
                        let hinge = d_p - d_n + margin;
                        if hinge > T::zero() {
                            value += hinge * inv_n;
                            weight_p += inv_n;
                            pull(neg, &trace, -inv_n)?;
                        }
                    }
                }
                pull(k, &positive, weight_p)?;
            }
            // Each centroid is a masked mean of its members' outputs.
            for i in 0..n {
                let cen = centroids.get(labels[i]).expect("present class");
                let g_mean = &grad_means[labels[i]];
                let len = outputs[i].len();
                for t in (0..len).filter(|&t| outputs[i].is_valid(t)) {
                    let share = T::one() / T::from_usize_lossy(cen.counts[t]);
                    for c in 0..outputs[i].channels() {
                        grad_outputs[i][c * len + t] += share * g_mean[c * len + t];
                    }
                }
            }
        }
    }

    if config.kind == LossKind::WcssReg {
        let prior = prior.ok_or_else(|| DtanError::invalid("wcss_reg requires a prior covariance"))?;
        for (stages, grads) in thetas.iter().zip(grad_thetas.iter_mut()) {
            for (theta, g) in stages.iter().zip(grads.iter_mut()) {
                value += prior.quadratic_form(theta)?;
                axpy(two, &prior.solve(theta)?, g);
            }
        }
    }

    Ok(LossEval { value, grad_outputs, grad_thetas })
}

fn batch_loss<T: Scalar>(
    config: &LossConfig,
    basis: &CpaBasis<T>,
    prior: Option<&PriorCovariance<T>>,
    originals: &[Signal<T>],
    thetas: &[Vec<Vec<T>>],
    labels: &[usize],
) -> Result<LossEval<T>> {
    if thetas.len() != originals.len() {
        return Err(DtanError::shape("one set of warp parameters per signal expected"));
    }
    let outputs = originals
        .iter()
        .zip(thetas)
        .map(|(u, th)| Ok(WarpTrace::forward(basis, u, th)?.into_output()))
        .collect::<Result<Vec<_>>>()?;
    evaluate(config, basis, prior, originals, &outputs, thetas, labels)
}

/// Loss value and its exact gradient with respect to every stage parameter
/// of every sample, for parameters held fixed (not predicted from the
/// signals).
pub fn loss_gradients<T: Scalar>(
    config: &LossConfig,
    originals: &[Signal<T>],
    labels: &[usize],
    thetas: &[Vec<Vec<T>>],
    basis: &CpaBasis<T>,
    prior: Option<&PriorCovariance<T>>,
) -> Result<(Vec<Vec<Vec<T>>>, T)> {
    if thetas.len() != originals.len() {
        return Err(DtanError::shape("one set of warp parameters per signal expected"));
    }
    let traces = originals
        .iter()
        .zip(thetas)
        .map(|(u, th)| WarpTrace::forward(basis, u, th))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Signal<T>> = traces.iter().map(|t| t.output().clone()).collect();
    let eval = evaluate(config, basis, prior, originals, &outputs, thetas, labels)?;
    let grads = traces
        .iter()
        .enumerate()
        .map(|(i, trace)| {
            let (_, g) = trace.backward(basis, &eval.grad_outputs[i], Some(&eval.grad_thetas[i]), |_, _| Ok(None))?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((grads, eval.value))
}
