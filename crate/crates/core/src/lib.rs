//! Joint alignment and averaging of time-series ensembles with learned
//! diffeomorphic warps.
//!
//! A localization network predicts the coefficients of a continuous
//! piecewise-affine velocity field for each input signal; integrating that
//! field gives a monotone warp of the time axis, and resampling the signal
//! through it aligns the ensemble. Everything numeric is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix `f64`, and the `F32`
//! variants are provided for memory-constrained use.

pub mod baselines;
pub mod cpab;
pub mod data;
pub mod error;
pub mod eval;
pub mod locnet;
pub mod losses;
pub mod scalar;
pub mod warping;

pub use error::{DtanError, Result};
pub use scalar::Scalar;

pub type CpaBasisF64 = cpab::CpaBasis<f64>;
pub type CpaBasisF32 = cpab::CpaBasis<f32>;
pub type PriorCovarianceF64 = cpab::PriorCovariance<f64>;
pub type SignalF64 = warping::Signal<f64>;
pub type SignalF32 = warping::Signal<f32>;
pub type DatasetF64 = data::Dataset<f64>;
pub type AlignmentModelF64 = locnet::AlignmentModel<f64>;
pub type AlignmentModelF32 = locnet::AlignmentModel<f32>;
