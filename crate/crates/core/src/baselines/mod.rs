//! Reference alignment and averaging methods from the DTW family.
//!
//! Sequences are compared with the squared Euclidean ground cost between
//! time steps (summed over channels). Only the valid prefix of a masked
//! signal takes part.

mod dba;
mod dtw;
mod soft_dtw;

pub use dba::{dba, dba_init, DbaResult};
pub use dtw::{dtw, dtw_signals, DtwResult};
pub use soft_dtw::{soft_dtw, soft_dtw_barycenter, soft_dtw_grad, soft_dtw_signals, SoftDtwBarycenter};

use crate::error::{DtanError, Result};
use crate::scalar::Scalar;
use crate::warping::Signal;

/// Valid prefix of a signal as a `len x channels` time-major table.
#[derive(Clone, Debug)]
pub(crate) struct Frames<T> {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Frames<T> {
    pub fn from_signal(s: &Signal<T>) -> Self {
        let (channels, len) = (s.channels(), s.valid_len());
        let mut data = Vec::with_capacity(channels * len);
        for t in 0..len {
            for c in 0..channels {
                data.push(s.channel(c)[t]);
            }
        }
        Self { channels, len, data }
    }

    pub fn from_slice(values: &[T]) -> Self {
        Self { channels: 1, len: values.len(), data: values.to_vec() }
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn to_signal(&self) -> Signal<T> {
        let mut values = vec![T::zero(); self.data.len()];
        for t in 0..self.len {
            for c in 0..self.channels {
                values[c * self.len + t] = self.data[t * self.channels + c];
            }
        }
        Signal::new(self.channels, values).expect("non-empty frames")
    }
}

pub(crate) fn ground_cost<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_pair<T: Scalar>(u: &Frames<T>, w: &Frames<T>) -> Result<()> {
    if u.len == 0 || w.len == 0 {
        return Err(DtanError::invalid("DTW inputs must be non-empty"));
    }
    if u.channels != w.channels {
        return Err(DtanError::shape("DTW inputs must have the same channel count"));
    }
    Ok(())
}
