use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, AlignmentModel};
use crate::data::split_indices;
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;
use crate::warping::Signal;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Weight of the classification loss; 0 trains alignment only.
    pub multitask_weight: f64,
    /// Batch reductions always run in sample order; the flag is recorded so
    /// run configurations state it explicitly.
    pub deterministic: bool,
    /// Fraction held out to pick the best epoch; `None` keeps the last.
    pub validation_fraction: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1500,
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            multitask_weight: 0.0,
            deterministic: true,
            validation_fraction: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(DtanError::invalid("epochs, batch size and learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(DtanError::invalid("Adam betas must lie in [0, 1) and eps be positive"));
        }
        if !(self.multitask_weight >= 0.0) {
            return Err(DtanError::invalid("multitask weight must be non-negative"));
        }
        if let Some(f) = self.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(DtanError::invalid(format!("validation fraction must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training batch loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Validation loss per epoch, when a validation split is used.
    pub val_trace: Vec<f64>,
    /// Epoch whose weights were kept (0-based).
    pub best_epoch: usize,
}

/// Trains `model` in place with Adam on shuffled mini-batches.
///
/// Without labels every signal belongs to one class.
pub fn train<T: Scalar>(
    model: &mut AlignmentModel<T>,
    signals: &[Signal<T>],
    labels: Option<&[usize]>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if signals.is_empty() {
        return Err(DtanError::invalid("no training signals"));
    }
    let labels: Vec<usize> = match labels {
        Some(l) if l.len() == signals.len() => l.to_vec(),
        Some(l) => return Err(DtanError::shape(format!("{} labels for {} signals", l.len(), signals.len()))),
        None if model.loss_config().kind.uses_negatives() || config.multitask_weight > 0.0 => {
            return Err(DtanError::invalid("this loss needs class labels"));
        }
        None => vec![0; signals.len()],
    };
    let (train_idx, val_idx) = match config.validation_fraction {
        Some(f) => split_indices(&labels, f, config.seed)?,
        None => ((0..signals.len()).collect(), Vec::new()),
    };
    let val_signals: Vec<Signal<T>> = val_idx.iter().map(|&i| signals[i].clone()).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut opt = Adam::new(model.net().n_params(), config.lr, config.beta1, config.beta2, config.eps);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Vec<T>)> = None;
    let mut order = train_idx.clone();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Signal<T>> = chunk.iter().map(|&i| signals[i].clone()).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let g = model.batch_gradient(&batch, &batch_labels, config.multitask_weight)?;
            let loss = g.loss.as_f64();
            if !loss.is_finite() || g.grad.iter().any(|v| !v.is_finite()) {
                return Err(DtanError::Numerical(format!("training diverged at epoch {epoch}")));
            }
            opt.update(model.net_mut().params_mut(), &g.grad);
            total += loss;
            batches += 1;
        }
        let epoch_loss = total / batches as f64;
        report.loss_trace.push(epoch_loss);
        if !val_signals.is_empty() {
            let val = model.loss(&val_signals, &val_labels)?.as_f64();
            if !val.is_finite() {
                return Err(DtanError::Numerical(format!("validation loss diverged at epoch {epoch}")));
            }
            report.val_trace.push(val);
            if best.as_ref().is_none_or(|(b, _)| val < *b) {
                best = Some((val, model.net().params().to_vec()));
                report.best_epoch = epoch;
            }
        } else {
            report.best_epoch = epoch;
        }
        if epoch % 50 == 0 || epoch + 1 == config.epochs {
            info!("epoch {epoch}: loss {epoch_loss:.6}");
        } else {
            debug!("epoch {epoch}: loss {epoch_loss:.6}");
        }
    }
    if let Some((_, params)) = best {
        model.net_mut().params_mut().copy_from_slice(&params);
    }
    Ok(report)
}
