mod common;

use common::*;
use dtan_core::cpab::{BoundaryCondition, CpaBasis, PriorCovariance};
use dtan_core::losses::{class_means, cpa_regularizer, icae, loss_gradients, wcss, LossConfig, LossKind};
use dtan_core::warping::{make_grid, Signal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [LossKind; 4] = [LossKind::Wcss, LossKind::WcssReg, LossKind::Icae, LossKind::IcaeTriplet];

/// Smooth random signal: a few random low-frequency sinusoids.
fn smooth_signal<R: Rng>(rng: &mut R, len: usize) -> Signal<f64> {
    let grid: Vec<f64> = make_grid(len).unwrap();
    let comps: Vec<(f64, f64, f64)> =
        (0..3).map(|k| (rng.random_range(-1.0..1.0), (k + 1) as f64, rng.random_range(0.0..6.28))).collect();
    let values = grid
        .iter()
        .map(|&x| comps.iter().map(|&(a, f, ph)| a * (std::f64::consts::TAU * f * x + ph).sin()).sum())
        .collect();
    Signal::univariate(values).unwrap()
}

fn batch(seed: u64, n: usize, len: usize, stages: usize, basis: &CpaBasis<f64>) -> (Vec<Signal<f64>>, Vec<usize>, Vec<Vec<Vec<f64>>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signals = (0..n).map(|_| smooth_signal(&mut rng, len)).collect();
    let labels = (0..n).map(|i| i % 3).collect();
    let thetas = (0..n).map(|_| (0..stages).map(|_| random_theta(&mut rng, basis.dim(), 1.0)).collect()).collect();
    (signals, labels, thetas)
}

fn check_kind(kind: LossKind, stages: usize, seed: u64) -> f64 {
    let b = basis(4, BoundaryCondition::ZeroBoundary);
    let prior = PriorCovariance::new(&b, 1.0, 0.5).unwrap();
    let config = LossConfig::new(kind);
    let (signals, labels, thetas) = batch(seed, 8, 32, stages, &b);
    let (grads, _) = loss_gradients(&config, &signals, &labels, &thetas, &b, Some(&prior)).unwrap();
    let h = 1e-5;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for i in 0..thetas.len() {
        for r in 0..stages {
            for j in 0..b.dim() {
                let mut plus = thetas.clone();
                let mut minus = thetas.clone();
                plus[i][r][j] += h;
                minus[i][r][j] -= h;
                let lp = loss_gradients(&config, &signals, &labels, &plus, &b, Some(&prior)).unwrap().1;
                let lm = loss_gradients(&config, &signals, &labels, &minus, &b, Some(&prior)).unwrap().1;
                analytic.push(grads[i][r][j]);
                numeric.push((lp - lm) / (2.0 * h));
            }
        }
    }
    max_mixed_error(&analytic, &numeric, 1e-8)
}

#[test]
fn single_stage_gradients_match_finite_differences() {
    for kind in KINDS {
        let err = check_kind(kind, 1, 21);
        assert!(err < 1e-4, "{kind}: {err:e}");
    }
}

#[test]
fn two_stage_gradients_match_finite_differences() {
    for kind in KINDS {
        let err = check_kind(kind, 2, 22);
        assert!(err < 1e-4, "{kind}: {err:e}");
    }
}

#[test]
fn regularized_gradient_differs_by_prior_term() {
    let b = basis(4, BoundaryCondition::Free);
    let prior = PriorCovariance::new(&b, 0.5, 0.5).unwrap();
    let (signals, labels, thetas) = batch(23, 6, 24, 1, &b);
    let plain = loss_gradients(&LossConfig::new(LossKind::Wcss), &signals, &labels, &thetas, &b, Some(&prior)).unwrap();
    let reg = loss_gradients(&LossConfig::new(LossKind::WcssReg), &signals, &labels, &thetas, &b, Some(&prior)).unwrap();
    for i in 0..signals.len() {
        let prior_grad: Vec<f64> = prior.solve(&thetas[i][0]).unwrap().iter().map(|v| 2.0 * v).collect();
        for j in 0..b.dim() {
            let diff = reg.0[i][0][j] - plain.0[i][0][j];
            assert!((diff - prior_grad[j]).abs() <= 1e-12 * prior_grad[j].abs().max(1.0));
        }
    }
    let flat: Vec<Vec<f64>> = thetas.iter().map(|t| t[0].clone()).collect();
    assert!((reg.1 - plain.1 - cpa_regularizer(&flat, &prior).unwrap()).abs() < 1e-12);
}

#[test]
fn identical_signals_at_identity_have_zero_wcss_gradient() {
    let b = basis(4, BoundaryCondition::ZeroBoundary);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let s = smooth_signal(&mut rng, 32);
    let signals = vec![s; 5];
    let thetas = vec![vec![vec![0.0; b.dim()]]; 5];
    let (g, v) = loss_gradients(&LossConfig::new(LossKind::Wcss), &signals, &[0; 5], &thetas, &b, None).unwrap();
    // Only the rounding of sum / count separates the mean from the signal.
    assert!(v < 1e-28);
    assert!(g.iter().flatten().flatten().all(|&x| x.abs() < 1e-14));
}

#[test]
fn icae_at_identity_equals_wcss() {
    let b = basis(8, BoundaryCondition::Free);
    let (signals, labels, _) = batch(25, 9, 40, 1, &b);
    let zero = vec![vec![0.0; b.dim()]; signals.len()];
    let c = class_means(&signals, &labels).unwrap();
    let w = wcss(&signals, &labels, &c).unwrap();
    let i = icae(&signals, &zero, &labels, &b).unwrap();
    assert!((w - i).abs() < 1e-12);
}

#[test]
fn icae_of_shared_warp_on_identical_signals_is_small() {
    let b = basis(8, BoundaryCondition::ZeroBoundary);
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let grid: Vec<f64> = make_grid(128).unwrap();
    let s = Signal::univariate(grid.iter().map(|x| (std::f64::consts::TAU * x).sin()).collect()).unwrap();
    let theta = random_theta(&mut rng, b.dim(), 1.0);
    let v = icae(&vec![s; 4], &vec![theta; 4], &[0; 4], &b).unwrap();
    assert!(v < 1e-3, "{v}");
}

#[test]
fn wcss_is_invariant_to_relabeling() {
    let b = basis(4, BoundaryCondition::Free);
    let (signals, labels, _) = batch(27, 9, 16, 1, &b);
    let relabeled: Vec<usize> = labels.iter().map(|&k| [2, 0, 1][k]).collect();
    let a = wcss(&signals, &labels, &class_means(&signals, &labels).unwrap()).unwrap();
    let r = wcss(&signals, &relabeled, &class_means(&signals, &relabeled).unwrap()).unwrap();
    assert!((a - r).abs() < 1e-12);
}

#[test]
fn variable_length_means_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    for _ in 0..20 {
        let len = 12;
        let signals: Vec<Signal<f64>> = (0..7)
            .map(|_| {
                let valid = rng.random_range(2..=len);
                let values = (0..2 * len).map(|t| if t % len < valid { rng.random_range(-2.0..2.0) } else { 0.0 }).collect();
                Signal::new(2, values).unwrap().with_mask((0..len).map(|t| t < valid).collect()).unwrap()
            })
            .collect();
        let labels: Vec<usize> = (0..7).map(|_| rng.random_range(0..2)).collect();
        let c = class_means(&signals, &labels).unwrap();
        for (k, cen) in c.present() {
            for ch in 0..2 {
                for t in 0..len {
                    let (mut sum, mut n) = (0.0, 0usize);
                    for (s, _) in signals.iter().zip(&labels).filter(|(_, &l)| l == k) {
                        if s.is_valid(t) {
                            sum += s.channel(ch)[t];
                            n += 1;
                        }
                    }
                    let expect = if n > 0 { sum / n as f64 } else { 0.0 };
                    assert_eq!(cen.mean.channel(ch)[t], expect);
                    assert_eq!(cen.mean.is_valid(t), n > 0);
                }
            }
        }
    }
}
