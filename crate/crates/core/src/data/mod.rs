//! Datasets: UCR-style text files, normalization, validation splits and a
//! synthetic generator of randomly warped signals.

mod synth;
mod ucr;

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use synth::{base_shapes, dirichlet_warp, gen_synthetic, SynthSpec, SyntheticSet};
pub use ucr::{load_ucr, read_ucr, write_rows, write_ucr};

use crate::error::{DtanError, Result};
use crate::scalar::Scalar;
use crate::warping::Signal;

/// Labeled ensemble of equally sized (possibly padded) signals.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub name: String,
    pub signals: Vec<Signal<T>>,
    /// Class id of every signal, in `0..n_classes`.
    pub labels: Vec<usize>,
    /// Original label text of each class id.
    pub class_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(name: impl Into<String>, signals: Vec<Signal<T>>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if signals.len() != labels.len() {
            return Err(DtanError::shape(format!("{} labels for {} signals", labels.len(), signals.len())));
        }
        if let Some(first) = signals.first() {
            if signals.iter().any(|s| !s.same_shape(first)) {
                return Err(DtanError::shape("all signals of a dataset must share channels and length"));
            }
        }
        if let Some(&k) = labels.iter().find(|&&k| k >= class_names.len()) {
            return Err(DtanError::invalid(format!("label {k} has no class name")));
        }
        let signals = signals.into_iter().zip(&labels).map(|(s, &k)| s.with_label(k)).collect();
        Ok(Self { name: name.into(), signals, labels, class_names })
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn channels(&self) -> usize {
        self.signals.first().map_or(0, Signal::channels)
    }

    /// Padded length shared by all signals.
    pub fn max_len(&self) -> usize {
        self.signals.first().map_or(0, Signal::len)
    }

    pub fn is_variable_length(&self) -> bool {
        self.signals.iter().any(|s| s.mask().is_some())
    }

    /// Samples per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &k in &self.labels {
            counts[k] += 1;
        }
        counts
    }

    /// Sub-dataset with the given sample indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            signals: indices.iter().map(|&i| self.signals[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Shifts and scales every channel of `s` to zero mean and unit population
/// variance over its valid samples. Constant channels become zero.
///
/// Returns `false` if some channel was constant.
pub fn z_normalize<T: Scalar>(s: &mut Signal<T>) -> bool {
    let len = s.len();
    let valid = s.valid_len();
    let mut all_varying = true;
    for c in 0..s.channels() {
        let row = &mut s.values_mut()[c * len..(c + 1) * len];
        let n = T::from_usize_lossy(valid);
        let mean = row[..valid].iter().copied().sum::<T>() / n;
        let var = row[..valid].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let std = var.sqrt();
        if std > T::lit(1e-12) * (T::one() + mean.abs()) {
            row[..valid].iter_mut().for_each(|v| *v = (*v - mean) / std);
        } else {
            row[..valid].iter_mut().for_each(|v| *v = T::zero());
            all_varying = false;
        }
        row[valid..].iter_mut().for_each(|v| *v = T::zero());
    }
    all_varying
}

/// Stratified split of sample indices into `(train, validation)`.
///
/// Each class contributes `round(fraction * n_k)` validation samples while
/// keeping at least one for training. If some class has fewer than two
/// samples the split falls back to an unstratified one.
pub fn split_indices(labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DtanError::invalid(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    if labels.len() < 2 {
        return Err(DtanError::invalid("need at least two samples to split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &k) in labels.iter().enumerate() {
        by_class.entry(k).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    if by_class.values().any(|m| m.len() < 2) {
        warn!("a class has fewer than two samples; falling back to an unstratified split");
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        let n_val = ((labels.len() as f64 * fraction).round() as usize).clamp(1, labels.len() - 1);
        val.extend_from_slice(&all[..n_val]);
        train.extend_from_slice(&all[n_val..]);
    } else {
        for members in by_class.values_mut() {
            members.shuffle(&mut rng);
            let n_val = ((members.len() as f64 * fraction).round() as usize).min(members.len() - 1);
            val.extend_from_slice(&members[..n_val]);
            train.extend_from_slice(&members[n_val..]);
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Stratified `(train, validation)` split of a dataset.
pub fn split_validation<T: Scalar>(data: &Dataset<T>, fraction: f64, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    let (train, val) = split_indices(&data.labels, fraction, seed)?;
    Ok((data.subset(&train), data.subset(&val)))
}
