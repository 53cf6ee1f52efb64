use super::dtw::dtw_frames;
use super::Frames;
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;
use crate::warping::Signal;

#[derive(Clone, Debug)]
pub struct DbaResult<T> {
    pub barycenter: Signal<T>,
    /// Total DTW cost to the ensemble before the first update and after
    /// each iteration.
    pub cost_trace: Vec<T>,
}

/// Starting point of the averaging: the valid prefix of the signal whose
/// valid length is the median (lowest index among ties).
pub fn dba_init<T: Scalar>(signals: &[Signal<T>]) -> Result<Signal<T>> {
    if signals.is_empty() {
        return Err(DtanError::invalid("empty ensemble"));
    }
    let mut lens: Vec<usize> = signals.iter().map(Signal::valid_len).collect();
    lens.sort_unstable();
    let median = lens[(lens.len() - 1) / 2];
    let pick = signals.iter().find(|s| s.valid_len() == median).expect("median length present");
    Ok(Frames::from_signal(pick).to_signal())
}

fn total_cost<T: Scalar>(mean: &Frames<T>, ensemble: &[Frames<T>], band: Option<usize>) -> Result<(T, Vec<Vec<(usize, usize)>>)> {
    let mut cost = T::zero();
    let mut paths = Vec::with_capacity(ensemble.len());
    for s in ensemble {
        let r = dtw_frames(mean, s, band)?;
        cost += r.cost;
        paths.push(r.path);
    }
    Ok((cost, paths))
}

/// DTW barycenter averaging.
///
/// Each iteration aligns every signal to the current mean and replaces
/// each mean sample by the average of the samples aligned to it. An update
/// that would raise the total cost (possible only through rounding) is
/// rejected, so the trace never increases.
pub fn dba<T: Scalar>(signals: &[Signal<T>], init: &Signal<T>, iters: usize, band: Option<usize>) -> Result<DbaResult<T>> {
    if signals.is_empty() {
        return Err(DtanError::invalid("empty ensemble"));
    }
    if iters == 0 {
        return Err(DtanError::invalid("DBA needs at least one iteration"));
    }
    let ensemble: Vec<Frames<T>> = signals.iter().map(Frames::from_signal).collect();
    let mut mean = Frames::from_signal(init);
    let channels = mean.channels;
    let (mut cost, mut paths) = total_cost(&mean, &ensemble, band)?;
    let mut cost_trace = vec![cost];
    for _ in 0..iters {
        let mut sums = vec![T::zero(); mean.data.len()];
        let mut counts = vec![0usize; mean.len];
        for (s, path) in ensemble.iter().zip(&paths) {
            for &(i, j) in path {
                counts[i] += 1;
                for (acc, &v) in sums[i * channels..(i + 1) * channels].iter_mut().zip(s.frame(j)) {
                    *acc += v;
                }
            }
        }
        let mut next = mean.clone();
        for (t, &n) in counts.iter().enumerate() {
            for c in 0..channels {
                next.data[t * channels + c] = sums[t * channels + c] / T::from_usize_lossy(n);
            }
        }
        let (next_cost, next_paths) = total_cost(&next, &ensemble, band)?;
        if next_cost <= cost {
            mean = next;
            cost = next_cost;
            paths = next_paths;
        }
        cost_trace.push(cost);
    }
    Ok(DbaResult { barycenter: mean.to_signal(), cost_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_ensemble_is_a_fixed_point() {
        let s = Signal::univariate(vec![0.0, 1.0, 3.0, 1.0]).unwrap();
        let r = dba(&vec![s.clone(); 4], &s, 1, None).unwrap();
        assert_eq!(r.barycenter.values(), s.values());
        assert_eq!(r.cost_trace, vec![0.0, 0.0]);
    }

    #[test]
    fn init_picks_median_length() {
        let a = Signal::univariate(vec![1.0, 2.0, 0.0, 0.0]).unwrap().with_mask(vec![true, true, false, false]).unwrap();
        let b = Signal::univariate(vec![1.0, 2.0, 3.0, 0.0]).unwrap().with_mask(vec![true, true, true, false]).unwrap();
        let c = Signal::univariate(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dba_init(&[a, c, b]).unwrap().len(), 3);
    }
}
