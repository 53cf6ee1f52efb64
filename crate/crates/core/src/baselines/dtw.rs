use super::{check_pair, ground_cost, Frames};
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;
use crate::warping::Signal;

/// Optimal alignment: total cost and the 0-based index path from `(0, 0)`
/// to `(n - 1, m - 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DtwResult<T> {
    pub cost: T,
    pub path: Vec<(usize, usize)>,
}

/// Sakoe-Chiba admissibility of cell `(i, j)` for lengths `n` and `m`.
fn in_band(i: usize, j: usize, n: usize, m: usize, band: Option<usize>) -> bool {
    band.is_none_or(|b| ((i * m) as f64 / n as f64 - j as f64).abs() <= b as f64)
}

pub(crate) fn dtw_frames<T: Scalar>(u: &Frames<T>, w: &Frames<T>, band: Option<usize>) -> Result<DtwResult<T>> {
    check_pair(u, w)?;
    let (n, m) = (u.len, w.len);
    let inf = T::infinity();
    let mut acc = vec![inf; n * m];
    for i in 0..n {
        for j in 0..m {
            if !in_band(i, j, n, m, band) {
                continue;
            }
            let d = ground_cost(u.frame(i), w.frame(j));
            let best = if i == 0 && j == 0 {
                T::zero()
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { inf };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { inf };
                let left = if j > 0 { acc[i * m + j - 1] } else { inf };
                diag.min(up).min(left)
            };
            acc[i * m + j] = d + best;
        }
    }
    let cost = acc[n * m - 1];
    if !cost.is_finite() {
        return Err(DtanError::invalid(format!("band {band:?} admits no path between lengths {n} and {m}")));
    }
    // Backtrack preferring the diagonal, then the step in the first index.
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { inf };
        let up = if i > 0 { acc[(i - 1) * m + j] } else { inf };
        let left = if j > 0 { acc[i * m + j - 1] } else { inf };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult { cost, path })
}

/// DTW between univariate sequences with an optional Sakoe-Chiba radius
/// `|i m / n - j| <= band`.
pub fn dtw<T: Scalar>(u: &[T], w: &[T], band: Option<usize>) -> Result<DtwResult<T>> {
    dtw_frames(&Frames::from_slice(u), &Frames::from_slice(w), band)
}

/// DTW between the valid prefixes of two (multichannel) signals.
pub fn dtw_signals<T: Scalar>(u: &Signal<T>, w: &Signal<T>, band: Option<usize>) -> Result<DtwResult<T>> {
    dtw_frames(&Frames::from_signal(u), &Frames::from_signal(w), band)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_alignment_is_diagonal() {
        let u = [0.3, -1.0, 2.0, 0.5];
        let r = dtw(&u, &u, None).unwrap();
        assert_eq!(r.cost, 0.0);
        assert_eq!(r.path, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn small_hand_case() {
        let r = dtw(&[0.0, 1.0, 2.0], &[0.0, 2.0], None).unwrap();
        assert_eq!(r.cost, 1.0);
        assert_eq!(r.path.first(), Some(&(0, 0)));
        assert_eq!(r.path.last(), Some(&(2, 1)));
    }

    #[test]
    fn zero_band_on_unequal_lengths_fails() {
        assert!(dtw(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0], Some(0)).is_err());
        assert!(dtw::<f64>(&[], &[1.0], None).is_err());
    }

    #[test]
    fn band_restricts_cost_from_below() {
        let u = [0.0, 0.0, 0.0, 5.0, 0.0, 0.0];
        let w = [5.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let free = dtw(&u, &w, None).unwrap().cost;
        let banded = dtw(&u, &w, Some(1)).unwrap().cost;
        assert!(banded >= free);
    }
}
