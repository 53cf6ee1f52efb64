use std::time::Instant;

use crate::baselines::{dba, dba_init, soft_dtw_barycenter};
use crate::error::{DtanError, Result};
use crate::locnet::{train, AlignmentModel, TrainConfig};
use crate::losses::class_means;
use crate::scalar::Scalar;
use crate::warping::Signal;

/// Wall-clock seconds of repeated runs of one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    pub method: String,
    pub phase: String,
    pub threads: usize,
    pub times: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

/// Runs `f` `repeats` times on a dedicated pool of `threads` threads.
pub fn time_repeated<F>(method: &str, phase: &str, repeats: usize, threads: usize, mut f: F) -> Result<Timing>
where
    F: FnMut() -> Result<()> + Send,
{
    if repeats == 0 || threads == 0 {
        return Err(DtanError::invalid("repeats and threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| DtanError::invalid(e.to_string()))?;
    let times = pool.install(|| {
        (0..repeats)
            .map(|_| {
                let start = Instant::now();
                f()?;
                Ok(start.elapsed().as_secs_f64())
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mean = times.iter().sum::<f64>() / repeats as f64;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if repeats % 2 == 1 {
        sorted[repeats / 2]
    } else {
        0.5 * (sorted[repeats / 2 - 1] + sorted[repeats / 2])
    };
    Ok(Timing { method: method.into(), phase: phase.into(), threads, times, mean, median })
}

#[derive(Clone, Debug)]
pub enum TimedMethod<'a, T> {
    /// Plain mean of the batch.
    Mean,
    /// Inference: align the batch with `model` and average. With a training
    /// configuration a fresh copy of the model is also trained on the train
    /// set each repeat.
    Dtan { model: &'a AlignmentModel<T>, train: Option<TrainConfig> },
    Dba { iters: usize },
    SoftDtw { gamma: f64, iters: usize, lr: f64 },
}

impl<T> TimedMethod<'_, T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Dtan { .. } => "dtan",
            Self::Dba { .. } => "dba",
            Self::SoftDtw { .. } => "softdtw",
        }
    }
}

/// Times computing the barycenter of `batch`, plus training for DTAN.
pub fn timing_harness<T: Scalar>(
    method: &TimedMethod<'_, T>,
    train_set: &[Signal<T>],
    batch: &[Signal<T>],
    repeats: usize,
    threads: usize,
) -> Result<Vec<Timing>> {
    if batch.is_empty() {
        return Err(DtanError::invalid("empty timing batch"));
    }
    let name = method.name();
    let single_class = vec![0; batch.len()];
    let mut out = Vec::new();
    match method {
        TimedMethod::Mean => {
            out.push(time_repeated(name, "inference", repeats, threads, || class_means(batch, &single_class).map(drop))?);
        }
        TimedMethod::Dtan { model, train: config } => {
            if let Some(config) = config {
                if train_set.is_empty() {
                    return Err(DtanError::invalid("empty training set"));
                }
                out.push(time_repeated(name, "train", repeats, threads, || {
                    let mut fresh = (*model).clone();
                    train(&mut fresh, train_set, None, config).map(drop)
                })?);
            }
            out.push(time_repeated(name, "inference", repeats, threads, || {
                let (aligned, _) = model.align_new(batch)?;
                class_means(&aligned, &single_class).map(drop)
            })?);
        }
        TimedMethod::Dba { iters } => {
            let init = dba_init(batch)?;
            out.push(time_repeated(name, "inference", repeats, threads, || dba(batch, &init, *iters, None).map(drop))?);
        }
        TimedMethod::SoftDtw { gamma, iters, lr } => {
            let init = dba_init(batch)?;
            out.push(time_repeated(name, "inference", repeats, threads, || {
                soft_dtw_barycenter(batch, &init, T::lit(*gamma), *iters, T::lit(*lr)).map(drop)
            })?);
        }
    }
    Ok(out)
}
