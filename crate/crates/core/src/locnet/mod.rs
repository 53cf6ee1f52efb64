//! Localization network, recurrent alignment model, training and model
//! files.
//!
//! An [`AlignmentModel`] predicts warp parameters from a signal, warps the
//! signal, and (for `R > 1` recurrences) feeds the warped signal back
//! through the same network. Gradients flow through every stage, including
//! the dependence of each stage's parameters on its input.

mod adam;
mod net;
mod serialize;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adam::Adam;
pub use net::{ArchSpec, ConvSpec, LocNet, NetCache, NetOutput, OUTPUT_INIT_VARIANCE};
pub use serialize::{FORMAT_VERSION, MAGIC};
pub use train::{train, TrainConfig, TrainReport};

use crate::cpab::{CpaBasis, PriorCovariance, Tessellation};
use crate::error::{DtanError, Result};
use crate::losses::{self, LossConfig, LossKind};
use crate::scalar::{axpy, Scalar};
use crate::warping::{Signal, WarpTrace};

/// Trainable joint-alignment model.
#[derive(Clone, Debug)]
pub struct AlignmentModel<T> {
    tess: Tessellation,
    basis: CpaBasis<T>,
    prior: Option<PriorCovariance<T>>,
    net: LocNet<T>,
    recurrences: usize,
    loss: LossConfig,
}

/// One forward rollout with everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct Rollout<T> {
    pub trace: WarpTrace<T>,
    pub caches: Vec<NetCache<T>>,
    /// Classifier logits of the first stage, when the model has a head.
    pub logits: Option<Vec<T>>,
}

/// Loss and flat parameter gradient of one batch.
#[derive(Clone, Debug)]
pub struct BatchGradient<T> {
    pub loss: T,
    pub align_loss: T,
    pub class_loss: T,
    pub grad: Vec<T>,
}

impl<T: Scalar> AlignmentModel<T> {
    /// Fresh model with seeded weights.
    pub fn new(
        tess: &Tessellation,
        arch: &ArchSpec,
        channels: usize,
        input_len: usize,
        recurrences: usize,
        loss: LossConfig,
        seed: u64,
    ) -> Result<Self> {
        let basis = CpaBasis::new(tess)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = LocNet::init(arch, channels, input_len, basis.dim(), &mut rng)?;
        Self::from_parts(tess.clone(), basis, net, recurrences, loss)
    }

    pub(crate) fn from_parts(
        tess: Tessellation,
        basis: CpaBasis<T>,
        net: LocNet<T>,
        recurrences: usize,
        loss: LossConfig,
    ) -> Result<Self> {
        if recurrences == 0 {
            return Err(DtanError::invalid("at least one recurrence is required"));
        }
        if net.out_dim() != basis.dim() {
            return Err(DtanError::shape("network output width differs from basis dimension"));
        }
        loss.validate()?;
        let prior = if loss.kind == LossKind::WcssReg {
            Some(PriorCovariance::new(&basis, T::lit(loss.lambda_sigma), T::lit(loss.lambda_smooth))?)
        } else {
            None
        };
        Ok(Self { tess, basis, prior, net, recurrences, loss })
    }

    pub fn tessellation(&self) -> &Tessellation {
        &self.tess
    }

    pub fn basis(&self) -> &CpaBasis<T> {
        &self.basis
    }

    pub fn prior(&self) -> Option<&PriorCovariance<T>> {
        self.prior.as_ref()
    }

    pub fn net(&self) -> &LocNet<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut LocNet<T> {
        &mut self.net
    }

    pub fn recurrences(&self) -> usize {
        self.recurrences
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    pub fn channels(&self) -> usize {
        self.net.in_channels()
    }

    pub fn input_len(&self) -> usize {
        self.net.input_len()
    }

    fn check_signal(&self, u: &Signal<T>) -> Result<()> {
        if u.channels() != self.channels() || u.len() != self.input_len() {
            return Err(DtanError::shape(format!(
                "model expects {} x {} signals, got {} x {}",
                self.channels(),
                self.input_len(),
                u.channels(),
                u.len()
            )));
        }
        Ok(())
    }

    /// Warp parameters, pooled features and logits for one signal.
    pub fn forward(&self, u: &Signal<T>) -> Result<NetOutput<T>> {
        self.check_signal(u)?;
        self.net.forward(u.values())
    }

    /// Runs `stages` recurrences, keeping the caches for backprop.
    pub fn rollout(&self, u: &Signal<T>, stages: usize) -> Result<Rollout<T>> {
        if stages == 0 {
            return Err(DtanError::invalid("at least one recurrence is required"));
        }
        self.check_signal(u)?;
        let mut trace = WarpTrace::new(u.clone());
        let mut caches = Vec::with_capacity(stages);
        let mut logits = None;
        for r in 0..stages {
            let out = self.net.forward(trace.output().values())?;
            if let Some(bad) = out.theta.iter().position(|v| !v.is_finite()) {
                return Err(DtanError::NonFinite(format!("predicted theta[{bad}]")));
            }
            if r == 0 {
                logits = out.logits;
            }
            trace.push(&self.basis, out.theta)?;
            caches.push(out.cache);
        }
        Ok(Rollout { trace, caches, logits })
    }

    /// Warped signal and per-stage parameters after `stages` recurrences.
    pub fn rdtan_apply(&self, u: &Signal<T>, stages: usize) -> Result<(Signal<T>, Vec<Vec<T>>)> {
        let rollout = self.rollout(u, stages)?;
        let thetas = rollout.trace.thetas();
        Ok((rollout.trace.into_output(), thetas))
    }

    /// Aligns unseen signals with the trained number of recurrences.
    pub fn align_new(&self, signals: &[Signal<T>]) -> Result<(Vec<Signal<T>>, Vec<Vec<Vec<T>>>)> {
        let results: Vec<(Signal<T>, Vec<Vec<T>>)> =
            signals.par_iter().map(|u| self.rdtan_apply(u, self.recurrences)).collect::<Result<_>>()?;
        Ok(results.into_iter().unzip())
    }

    /// Most likely class from the classifier head.
    pub fn classify(&self, u: &Signal<T>) -> Result<Option<usize>> {
        let out = self.forward(u)?;
        Ok(out.logits.map(|l| argmax(&l)))
    }

    /// Alignment loss of a batch without gradients.
    pub fn loss(&self, signals: &[Signal<T>], labels: &[usize]) -> Result<T> {
        let rollouts: Vec<Rollout<T>> =
            signals.par_iter().map(|u| self.rollout(u, self.recurrences)).collect::<Result<_>>()?;
        let outputs: Vec<Signal<T>> = rollouts.iter().map(|r| r.trace.output().clone()).collect();
        let thetas: Vec<Vec<Vec<T>>> = rollouts.iter().map(|r| r.trace.thetas()).collect();
        let eval = losses::evaluate(&self.loss, &self.basis, self.prior.as_ref(), signals, &outputs, &thetas, labels)?;
        Ok(eval.value)
    }

    /// Loss of a batch and its gradient with respect to all weights.
    ///
    /// With `beta > 0` the mean cross-entropy of the classifier head,
    /// scaled by `beta`, is added to the alignment loss.
    pub fn batch_gradient(&self, signals: &[Signal<T>], labels: &[usize], beta: f64) -> Result<BatchGradient<T>> {
        if beta > 0.0 && self.net.n_classes() == 0 {
            return Err(DtanError::invalid("multi-task training needs a classifier head"));
        }
        let rollouts: Vec<Rollout<T>> =
            signals.par_iter().map(|u| self.rollout(u, self.recurrences)).collect::<Result<_>>()?;
        let outputs: Vec<Signal<T>> = rollouts.iter().map(|r| r.trace.output().clone()).collect();
        let thetas: Vec<Vec<Vec<T>>> = rollouts.iter().map(|r| r.trace.thetas()).collect();
        let eval = losses::evaluate(&self.loss, &self.basis, self.prior.as_ref(), signals, &outputs, &thetas, labels)?;

        let n = signals.len();
        let mut class_loss = T::zero();
        let mut grad_logits: Vec<Option<Vec<T>>> = vec![None; n];
        if self.net.n_classes() > 0 {
            let scale = T::lit(beta) / T::from_usize_lossy(n);
            for (i, r) in rollouts.iter().enumerate() {
                let logits = r.logits.as_ref().expect("head present");
                let y = labels[i];
                if y >= logits.len() {
                    return Err(DtanError::invalid(format!("label {y} exceeds classifier size {}", logits.len())));
                }
                let probs = softmax(logits);
                class_loss -= probs[y].ln();
                let mut g: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                g[y] -= scale;
                grad_logits[i] = Some(g);
            }
            class_loss /= T::from_usize_lossy(n);
        }

        let per_sample: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let rollout = &rollouts[i];
                let mut grad = vec![T::zero(); self.net.n_params()];
                let g_logits = grad_logits[i].as_deref();
                rollout.trace.backward(
                    &self.basis,
                    &eval.grad_outputs[i],
                    Some(&eval.grad_thetas[i]),
                    |r, g_theta| {
                        let logits = if r == 0 { g_logits } else { None };
                        self.net.backward(&rollout.caches[r], g_theta, logits, &mut grad, r > 0)
                    },
                )?;
                Ok(grad)
            })
            .collect::<Result<_>>()?;
        let mut grad = vec![T::zero(); self.net.n_params()];
        for g in &per_sample {
            axpy(T::one(), g, &mut grad);
        }
        let beta_t = T::lit(beta);
        Ok(BatchGradient { loss: eval.value + beta_t * class_loss, align_loss: eval.value, class_loss, grad })
    }
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn argmax<T: Scalar>(values: &[T]) -> usize {
    values.iter().enumerate().fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}
