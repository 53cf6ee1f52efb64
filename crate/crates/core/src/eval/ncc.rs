use rayon::prelude::*;

use super::masked_distance;
use crate::baselines::{dba, dba_init, dtw_signals, soft_dtw_barycenter, soft_dtw_signals};
use crate::data::Dataset;
use crate::error::{DtanError, Result};
use crate::locnet::AlignmentModel;
use crate::losses::class_means;
use crate::scalar::Scalar;
use crate::warping::Signal;

/// How centroids are built and how test samples are compared to them.
#[derive(Clone, Copy, Debug)]
pub enum NccMethod<'a, T> {
    /// Class means of the raw signals, Euclidean distance.
    Euclidean,
    /// Class means of the aligned train set; test samples are aligned by
    /// the model and compared with the Euclidean distance.
    Dtan(&'a AlignmentModel<T>),
    /// DBA barycenters, DTW cost.
    Dba { iters: usize, band: Option<usize> },
    /// Soft-DTW barycenters, soft-DTW value.
    SoftDtw { gamma: f64, iters: usize, lr: f64 },
}

impl<T> NccMethod<'_, T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Euclidean => "euclidean",
            Self::Dtan(_) => "dtan",
            Self::Dba { .. } => "dba",
            Self::SoftDtw { .. } => "softdtw",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NccReport {
    pub method: String,
    /// Fraction of test samples labeled correctly.
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    /// Distance between every pair of class centroids under the method's
    /// metric (`f64::NAN` for classes without train samples).
    pub centroid_distances: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
}

fn distance<T: Scalar>(method: &NccMethod<'_, T>, a: &Signal<T>, b: &Signal<T>) -> Result<f64> {
    Ok(match method {
        NccMethod::Euclidean | NccMethod::Dtan(_) => masked_distance(a, b),
        NccMethod::Dba { band, .. } => dtw_signals(a, b, *band)?.cost.as_f64(),
        NccMethod::SoftDtw { gamma, .. } => soft_dtw_signals(a, b, T::lit(*gamma))?.as_f64(),
    })
}

fn centroids<T: Scalar>(method: &NccMethod<'_, T>, train: &Dataset<T>) -> Result<Vec<Option<Signal<T>>>> {
    let n = train.n_classes();
    match method {
        NccMethod::Euclidean | NccMethod::Dtan(_) => {
            let aligned = match method {
                NccMethod::Dtan(model) => model.align_new(&train.signals)?.0,
                _ => train.signals.clone(),
            };
            let means = class_means(&aligned, &train.labels)?;
            Ok((0..n).map(|k| means.get(k).map(|c| c.mean.clone())).collect())
        }
        NccMethod::Dba { .. } | NccMethod::SoftDtw { .. } => (0..n)
            .into_par_iter()
            .map(|k| {
                let members: Vec<Signal<T>> =
                    train.signals.iter().zip(&train.labels).filter(|(_, &l)| l == k).map(|(s, _)| s.clone()).collect();
                if members.is_empty() {
                    return Ok(None);
                }
                let init = dba_init(&members)?;
                let bary = match *method {
                    NccMethod::Dba { iters, band } => dba(&members, &init, iters, band)?.barycenter,
                    NccMethod::SoftDtw { gamma, iters, lr } => {
                        soft_dtw_barycenter(&members, &init, T::lit(gamma), iters, T::lit(lr))?.barycenter
                    }
                    _ => unreachable!(),
                };
                Ok(Some(bary))
            })
            .collect(),
    }
}

/// Nearest-centroid classification of `test` with centroids from `train`.
///
/// Both datasets must use the same class ids.
pub fn ncc_evaluate<T: Scalar>(method: &NccMethod<'_, T>, train: &Dataset<T>, test: &Dataset<T>) -> Result<NccReport> {
    if train.is_empty() || test.is_empty() {
        return Err(DtanError::invalid("train and test sets must be non-empty"));
    }
    let n = train.n_classes().max(test.n_classes());
    let counts = train.class_counts();
    if let Some(&k) = test.labels.iter().find(|&&k| counts.get(k).copied().unwrap_or(0) == 0) {
        return Err(DtanError::EmptyClass(k));
    }
    let cents = centroids(method, train)?;
    let present: Vec<(usize, &Signal<T>)> = cents.iter().enumerate().filter_map(|(k, c)| c.as_ref().map(|c| (k, c))).collect();

    let queries = match method {
        NccMethod::Dtan(model) => model.align_new(&test.signals)?.0,
        _ => test.signals.clone(),
    };
    let predictions: Vec<usize> = queries
        .par_iter()
        .map(|q| {
            let mut best = (f64::INFINITY, present[0].0);
            for &(k, c) in &present {
                let d = distance(method, q, c)?;
                if d < best.0 {
                    best = (d, k);
                }
            }
            Ok(best.1)
        })
        .collect::<Result<_>>()?;

    let mut confusion = vec![vec![0; n]; n];
    for (&truth, &pred) in test.labels.iter().zip(&predictions) {
        confusion[truth][pred] += 1;
    }
    let correct = test.labels.iter().zip(&predictions).filter(|(a, b)| a == b).count();
    let mut centroid_distances = vec![vec![f64::NAN; n]; n];
    for &(i, a) in &present {
        for &(j, b) in &present {
            centroid_distances[i][j] = distance(method, a, b)?;
        }
    }
    Ok(NccReport {
        method: method.name().to_string(),
        accuracy: correct as f64 / test.len() as f64,
        confusion,
        centroid_distances,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_set(levels: &[(f64, usize)]) -> Dataset<f64> {
        let signals = levels.iter().map(|&(v, _)| Signal::univariate(vec![v; 8]).unwrap()).collect();
        let labels = levels.iter().map(|&(_, k)| k).collect();
        Dataset::new("c", signals, labels, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn separated_constants_are_classified_perfectly() {
        let train = constant_set(&[(0.0, 0), (0.2, 0), (5.0, 1), (5.3, 1)]);
        let test = constant_set(&[(0.1, 0), (4.9, 1), (-0.3, 0)]);
        for method in [NccMethod::Euclidean, NccMethod::Dba { iters: 3, band: None }, NccMethod::SoftDtw { gamma: 0.1, iters: 5, lr: 0.01 }] {
            let r = ncc_evaluate(&method, &train, &test).unwrap();
            assert_eq!(r.accuracy, 1.0, "{}", r.method);
            assert_eq!(r.confusion, vec![vec![2, 0], vec![0, 1]]);
            assert!(r.centroid_distances[0][1] > 0.0);
        }
    }

    #[test]
    fn missing_train_class_is_an_error() {
        let train = constant_set(&[(0.0, 0), (0.2, 0)]);
        let test = constant_set(&[(0.1, 1)]);
        assert!(matches!(ncc_evaluate(&NccMethod::Euclidean, &train, &test), Err(DtanError::EmptyClass(1))));
    }
}
