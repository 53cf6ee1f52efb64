//! Randomly warped copies of a few smooth base shapes.
//!
//! Each warp is the piecewise-linear interpolant of a cumulative
//! distribution function: the increments between `knots + 1` equally spaced
//! knots are drawn from a symmetric Dirichlet distribution, so the warp is
//! strictly increasing and fixes 0 and 1. Small concentrations give strong
//! warps, large ones warps close to the identity.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use super::{z_normalize, Dataset};
use crate::error::{DtanError, Result};
use crate::scalar::Scalar;
use crate::warping::{make_grid, resample, Signal};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub len: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    /// Dirichlet concentration of every increment.
    pub alpha: f64,
    /// Number of warp segments.
    pub knots: usize,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    /// When set, each sample gets a random length in `min_len..=len` and is
    /// padded to `len`.
    pub min_len: Option<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            len: 128,
            per_class: 40,
            test_per_class: 40,
            alpha: 1.0,
            knots: 10,
            noise: 0.05,
            seed: 0,
            min_len: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.per_class == 0 {
            return Err(DtanError::invalid("need at least one class and one sample per class"));
        }
        if self.len < 2 || self.knots < 2 {
            return Err(DtanError::invalid("length and knot count must be at least 2"));
        }
        if !(self.alpha > 0.0) || !(self.noise >= 0.0) {
            return Err(DtanError::invalid("alpha must be positive and noise non-negative"));
        }
        if let Some(m) = self.min_len {
            if m < 2 || m > self.len {
                return Err(DtanError::invalid(format!("min_len must lie in 2..={}", self.len)));
            }
        }
        Ok(())
    }
}

/// Generated train/test sets with the latent warps used to make them.
#[derive(Clone, Debug)]
pub struct SyntheticSet<T> {
    pub train: Dataset<T>,
    pub test: Dataset<T>,
    /// Latent warp of each train sample, evaluated on its own uniform grid.
    pub train_warps: Vec<Vec<f64>>,
    pub test_warps: Vec<Vec<f64>>,
    /// Unwarped, noise-free class templates.
    pub bases: Vec<Signal<T>>,
}

fn gaussian(x: f64, mu: f64, sigma: f64) -> f64 {
    (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp()
}

fn shape(class: usize, x: f64) -> f64 {
    use std::f64::consts::TAU;
    match class {
        0 => gaussian(x, 0.5, 0.08),
        1 => (TAU * x).sin(),
        2 => gaussian(x, 0.3, 0.06) - gaussian(x, 0.7, 0.06),
        3 => ((x - 0.35) / 0.04).tanh() - ((x - 0.65) / 0.04).tanh(),
        k => (TAU * (k - 2) as f64 * x).sin() * gaussian(x, 0.5, 0.25),
    }
}

fn template<T: Scalar>(class: usize, len: usize) -> Result<Signal<T>> {
    let grid: Vec<f64> = make_grid(len)?;
    let mut s = Signal::univariate(grid.iter().map(|&x| T::lit(shape(class, x))).collect())?;
    z_normalize(&mut s);
    Ok(s)
}

/// Z-normalized template of each class sampled at `len` points.
pub fn base_shapes<T: Scalar>(n_classes: usize, len: usize) -> Result<Vec<Signal<T>>> {
    (0..n_classes).map(|k| template(k, len)).collect()
}

/// Random CDF warp evaluated at `grid`.
pub fn dirichlet_warp<R: Rng + ?Sized>(rng: &mut R, alpha: f64, knots: usize, grid: &[f64]) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let mut draws: Vec<f64> = (0..knots).map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|d| *d /= total);
    let mut cdf = Vec::with_capacity(knots + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for d in &draws {
        acc += d;
        cdf.push(acc);
    }
    cdf[knots] = 1.0;
    grid.iter()
        .map(|&x| {
            let pos = x.clamp(0.0, 1.0) * knots as f64;
            let j = (pos.floor() as usize).min(knots - 1);
            let w = pos - j as f64;
            cdf[j] + w * (cdf[j + 1] - cdf[j])
        })
        .collect()
}

fn generate<T: Scalar, R: Rng>(
    rng: &mut R,
    spec: &SynthSpec,
    per_class: usize,
    name: &str,
) -> Result<(Dataset<T>, Vec<Vec<f64>>)> {
    let noise = Normal::new(0.0, spec.noise).map_err(|e| DtanError::invalid(e.to_string()))?;
    let mut signals = Vec::new();
    let mut labels = Vec::new();
    let mut warps = Vec::new();
    for k in 0..spec.n_classes {
        for _ in 0..per_class {
            let valid = spec.min_len.map_or(spec.len, |m| rng.random_range(m..=spec.len));
            let template = template::<f64>(k, valid)?;
            let grid: Vec<f64> = make_grid(valid)?;
            let warp = dirichlet_warp(rng, spec.alpha, spec.knots, &grid);
            let warped = resample(&template, &warp)?;
            let mut values = vec![T::zero(); spec.len];
            for (v, &w) in values.iter_mut().zip(warped.values()) {
                *v = T::lit(w + if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 });
            }
            let s = Signal::univariate(values)?.with_mask((0..spec.len).map(|t| t < valid).collect())?;
            signals.push(s);
            labels.push(k);
            warps.push(warp);
        }
    }
    let names = (0..spec.n_classes).map(|k| k.to_string()).collect();
    Ok((Dataset::new(name, signals, labels, names)?, warps))
}

/// Draws the train and test sets of `spec`, deterministically per seed.
pub fn gen_synthetic<T: Scalar>(spec: &SynthSpec) -> Result<SyntheticSet<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (train, train_warps) = generate(&mut rng, spec, spec.per_class, "synthetic_train")?;
    let (test, test_warps) = generate(&mut rng, spec, spec.test_per_class, "synthetic_test")?;
    let bases = base_shapes(spec.n_classes, spec.len)?;
    Ok(SyntheticSet { train, test, train_warps, test_warps, bases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warps_are_monotone_and_fix_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid: Vec<f64> = make_grid(128).unwrap();
        for _ in 0..50 {
            let w = dirichlet_warp(&mut rng, 1.0, 10, &grid);
            assert_eq!(w[0], 0.0);
            assert_eq!(w[127], 1.0);
            assert!(w.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn high_concentration_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid: Vec<f64> = make_grid(128).unwrap();
        for _ in 0..50 {
            let w = dirichlet_warp(&mut rng, 1e4, 10, &grid);
            let disp = w.iter().zip(&grid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(disp < 0.02);
        }
    }

    #[test]
    fn noiseless_near_identity_samples_match_templates() {
        let spec = SynthSpec { alpha: 1e6, noise: 0.0, per_class: 3, test_per_class: 1, ..SynthSpec::default() };
        let set = gen_synthetic::<f64>(&spec).unwrap();
        for (s, &k) in set.train.signals.iter().zip(&set.train.labels) {
            let diff = s.values().iter().zip(set.bases[k].values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-2, "{diff}");
        }
    }

    #[test]
    fn default_spec_shapes_and_determinism() {
        let a = gen_synthetic::<f64>(&SynthSpec::default()).unwrap();
        assert_eq!(a.train.len(), 160);
        assert_eq!(a.test.len(), 160);
        assert_eq!(a.train.n_classes(), 4);
        let b = gen_synthetic::<f64>(&SynthSpec::default()).unwrap();
        assert_eq!(a.train.signals, b.train.signals);
    }

    #[test]
    fn variable_length_samples_are_masked() {
        let spec = SynthSpec { min_len: Some(64), per_class: 5, test_per_class: 1, ..SynthSpec::default() };
        let set = gen_synthetic::<f64>(&spec).unwrap();
        assert!(set.train.signals.iter().all(|s| s.len() == 128 && s.valid_len() >= 64));
        assert!(set.train.is_variable_length());
    }
}
