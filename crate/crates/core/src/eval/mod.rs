//! Alignment quality: nearest-centroid classification, variance reduction,
//! PCA of aligned ensembles and wall-clock timing.

mod ncc;
mod pca;
mod timing;

pub use ncc::{ncc_evaluate, NccMethod, NccReport};
pub use pca::{pca_aligned, PcaResult};
pub use timing::{time_repeated, timing_harness, TimedMethod, Timing};

use crate::error::{DtanError, Result};
use crate::losses::{class_means, wcss};
use crate::scalar::Scalar;
use crate::warping::Signal;

/// Within-class sum of squares before and after alignment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceReduction {
    /// `1 - wcss_aligned / wcss_raw`; negative when alignment made things
    /// worse.
    pub value: f64,
    pub wcss_raw: f64,
    pub wcss_aligned: f64,
}

impl VarianceReduction {
    pub fn is_negative(&self) -> bool {
        self.value < 0.0
    }
}

pub fn variance_reduction<T: Scalar>(raw: &[Signal<T>], aligned: &[Signal<T>], labels: &[usize]) -> Result<VarianceReduction> {
    if raw.len() != aligned.len() || raw.iter().zip(aligned).any(|(a, b)| !a.same_shape(b)) {
        return Err(DtanError::shape("raw and aligned ensembles differ in shape"));
    }
    let wcss_raw = wcss(raw, labels, &class_means(raw, labels)?)?.as_f64();
    let wcss_aligned = wcss(aligned, labels, &class_means(aligned, labels)?)?.as_f64();
    if wcss_raw <= 0.0 {
        return Err(DtanError::invalid("raw ensemble has zero within-class variance"));
    }
    Ok(VarianceReduction { value: 1.0 - wcss_aligned / wcss_raw, wcss_raw, wcss_aligned })
}

/// Euclidean distance over timesteps valid in both signals.
pub(crate) fn masked_distance<T: Scalar>(a: &Signal<T>, b: &Signal<T>) -> f64 {
    let len = a.len().min(b.len());
    let mut total = 0.0;
    for t in (0..len).filter(|&t| a.is_valid(t) && b.is_valid(t)) {
        for c in 0..a.channels() {
            let d = (a.channel(c)[t] - b.channel(c)[t]).as_f64();
            total += d * d;
        }
    }
    total.sqrt()
}
