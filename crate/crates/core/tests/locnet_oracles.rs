use dtan_core::cpab::{BoundaryCondition, Tessellation};
use dtan_core::data::{gen_synthetic, z_normalize, SynthSpec};
use dtan_core::locnet::{train, AlignmentModel, ArchSpec, ConvSpec, TrainConfig, OUTPUT_INIT_VARIANCE};
use dtan_core::losses::{LossConfig, LossKind};
use dtan_core::warping::{make_grid, Signal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn tiny_arch(n_classes: usize) -> ArchSpec {
    ArchSpec { blocks: vec![ConvSpec { kernel: 3, channels: 2 }], pool_width: 4, n_classes }
}

fn random_signals(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Signal<f64>> {
    (0..n)
        .map(|_| {
            let shift = rng.random_range(0.0..1.0);
            let mut s = Signal::univariate(
                (0..len).map(|t| ((t as f64 / len as f64 + shift) * 6.0).sin() + 0.1 * rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            z_normalize(&mut s);
            s
        })
        .collect()
}

/// Replaces every weight by a draw from `N(0, std^2)` so all layers matter.
fn scramble(model: &mut AlignmentModel<f64>, rng: &mut ChaCha8Rng, std: f64) {
    let normal = Normal::new(0.0, std).unwrap();
    model.net_mut().params_mut().iter_mut().for_each(|p| *p = normal.sample(rng));
}

fn mean_displacement(model: &AlignmentModel<f64>, signals: &[Signal<f64>]) -> f64 {
    let grid: Vec<f64> = make_grid(signals[0].len()).unwrap();
    let (_, thetas) = model.align_new(signals).unwrap();
    let mut total = 0.0;
    for chain in &thetas {
        let mut x = grid.clone();
        for theta in chain.iter().rev() {
            x = model.basis().integrate_grid(theta, &x).unwrap();
        }
        total += x.iter().zip(&grid).map(|(a, b)| (a - b).abs()).sum::<f64>() / grid.len() as f64;
    }
    total / thetas.len() as f64
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let signals = random_signals(&mut rng, 4, 16);
    let labels = [0, 1, 0, 1];
    let cases = [
        (LossKind::Wcss, BoundaryCondition::ZeroBoundary, 0.0),
        (LossKind::WcssReg, BoundaryCondition::Free, 0.0),
        (LossKind::Icae, BoundaryCondition::ZeroBoundary, 0.0),
        (LossKind::IcaeTriplet, BoundaryCondition::Circular, 0.0),
        (LossKind::Icae, BoundaryCondition::Free, 1.0),
    ];
    for (kind, bc, beta) in cases {
        let tess = Tessellation::new(2, bc).unwrap();
        let mut model = AlignmentModel::<f64>::new(&tess, &tiny_arch(2), 1, 16, 2, LossConfig::new(kind), 3).unwrap();
        scramble(&mut model, &mut rng, 0.3);
        let analytic = model.batch_gradient(&signals, &labels, beta).unwrap().grad;
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for j in 0..model.net().n_params() {
            let orig = model.net().params()[j];
            model.net_mut().params_mut()[j] = orig + h;
            let plus = model.batch_gradient(&signals, &labels, beta).unwrap().loss;
            model.net_mut().params_mut()[j] = orig - h;
            let minus = model.batch_gradient(&signals, &labels, beta).unwrap().loss;
            model.net_mut().params_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max((fd - analytic[j]).abs() / fd.abs().max(1e-4));
        }
        assert!(worst < 1e-3, "{kind} {bc} beta {beta}: {worst}");
    }
}

#[test]
fn multitask_gradient_is_additive_and_head_is_idle_without_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let signals = random_signals(&mut rng, 6, 16);
    let labels = [0, 1, 2, 0, 1, 2];
    let tess = Tessellation::new(4, BoundaryCondition::ZeroBoundary).unwrap();
    let mut model = AlignmentModel::<f64>::new(&tess, &tiny_arch(3), 1, 16, 2, LossConfig::default(), 4).unwrap();
    scramble(&mut model, &mut rng, 0.2);
    let g0 = model.batch_gradient(&signals, &labels, 0.0).unwrap();
    let head = model.net().head_range().unwrap();
    assert!(g0.grad[head].iter().all(|&v| v == 0.0));
    let g1 = model.batch_gradient(&signals, &labels, 1.0).unwrap();
    let g2 = model.batch_gradient(&signals, &labels, 2.5).unwrap();
    for ((a, b), c) in g0.grad.iter().zip(&g1.grad).zip(&g2.grad) {
        assert!((c - a - 2.5 * (b - a)).abs() < 1e-10 * (1.0 + c.abs()));
    }
    assert!((g2.loss - g0.loss - 2.5 * g1.class_loss).abs() < 1e-12);
}

/// Largest `|T(x) - x|` of each signal's composite warp.
fn max_displacements(model: &AlignmentModel<f64>, thetas: &[Vec<Vec<f64>>], len: usize) -> Vec<f64> {
    let grid: Vec<f64> = make_grid(len).unwrap();
    thetas
        .iter()
        .map(|chain| {
            let mut x = grid.clone();
            for theta in chain.iter().rev() {
                x = model.basis().integrate_grid(theta, &x).unwrap();
            }
            x.iter().zip(&grid).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .collect()
}

#[test]
fn fresh_models_are_near_identity() {
    let set = gen_synthetic::<f64>(&SynthSpec { per_class: 10, test_per_class: 1, ..SynthSpec::default() }).unwrap();
    let tess = Tessellation::new(16, BoundaryCondition::ZeroBoundary).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let smooth: Vec<Signal<f64>> = (0..20)
        .map(|_| {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let mut s = Signal::univariate((0..128).map(|t| (t as f64 / 127.0 * 6.0 + phase).sin()).collect()).unwrap();
            z_normalize(&mut s);
            s
        })
        .collect();
    for seed in 0..3 {
        let model = AlignmentModel::<f64>::new(&tess, &ArchSpec::default(), 1, 128, 4, LossConfig::default(), seed).unwrap();
        assert!(mean_displacement(&model, &set.train.signals) < 1e-2);
        // The output moves by at most the signal's slope times the warp's
        // largest displacement.
        let (aligned, thetas) = model.align_new(&smooth).unwrap();
        for ((a, u), disp) in aligned.iter().zip(&smooth).zip(max_displacements(&model, &thetas, 128)) {
            let slope = u.values().windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max) * 127.0;
            let diff = a.values().iter().zip(u.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(disp < 5e-3 && diff <= slope * disp + 1e-3, "{diff} vs {slope} * {disp}");
        }
    }
}

#[test]
fn output_layer_variance_matches_init() {
    let tess = Tessellation::new(32, BoundaryCondition::ZeroBoundary).unwrap();
    let model = AlignmentModel::<f64>::new(&tess, &ArchSpec::default(), 1, 128, 1, LossConfig::default(), 5).unwrap();
    let w = model.net().output_weights();
    assert!(w.len() >= 10_000);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
    assert!((var / OUTPUT_INIT_VARIANCE - 1.0).abs() < 0.2, "{var}");
    let again = AlignmentModel::<f64>::new(&tess, &ArchSpec::default(), 1, 128, 1, LossConfig::default(), 5).unwrap();
    assert_eq!(again.net().params(), model.net().params());
}

#[test]
fn batch_inference_equals_per_sample_inference() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let signals = random_signals(&mut rng, 5, 32);
    let tess = Tessellation::new(4, BoundaryCondition::ZeroBoundary).unwrap();
    let mut model = AlignmentModel::<f64>::new(&tess, &tiny_arch(0), 1, 32, 3, LossConfig::default(), 6).unwrap();
    scramble(&mut model, &mut rng, 0.2);
    let (aligned, thetas) = model.align_new(&signals).unwrap();
    for (i, u) in signals.iter().enumerate() {
        let (v, th) = model.rdtan_apply(u, 3).unwrap();
        assert_eq!(&v, &aligned[i]);
        assert_eq!(th, thetas[i]);
        assert_eq!(model.forward(u).unwrap().theta, th[0]);
    }
    // More recurrences than trained with are allowed at inference.
    let (_, th) = model.rdtan_apply(&signals[0], 6).unwrap();
    assert_eq!(th.len(), 6);
}

#[test]
fn batch_gradient_does_not_depend_on_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let signals = random_signals(&mut rng, 12, 32);
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let tess = Tessellation::new(4, BoundaryCondition::ZeroBoundary).unwrap();
    let mut model =
        AlignmentModel::<f64>::new(&tess, &tiny_arch(3), 1, 32, 2, LossConfig::new(LossKind::IcaeTriplet), 7).unwrap();
    scramble(&mut model, &mut rng, 0.2);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| model.batch_gradient(&signals, &labels, 1.0).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.grad, b.grad);
    assert_eq!(a.loss, b.loss);
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let signals = random_signals(&mut rng, 20, 32);
    let tess = Tessellation::new(4, BoundaryCondition::ZeroBoundary).unwrap();
    let config = TrainConfig { epochs: 4, batch_size: 8, seed: 3, ..TrainConfig::default() };
    let run = || {
        let mut model = AlignmentModel::<f64>::new(&tess, &tiny_arch(0), 1, 32, 2, LossConfig::default(), 1).unwrap();
        let report = train(&mut model, &signals, None, &config).unwrap();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        (report, bytes)
    };
    let (r1, b1) = run();
    let (r2, b2) = run();
    assert_eq!(r1, r2);
    assert_eq!(b1, b2);
    assert_eq!(r1.loss_trace.len(), 4);
}

#[test]
fn identical_signals_stay_put() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let one = random_signals(&mut rng, 1, 32).pop().unwrap();
    let signals = vec![one; 8];
    let tess = Tessellation::new(4, BoundaryCondition::ZeroBoundary).unwrap();
    let mut model = AlignmentModel::<f64>::new(&tess, &tiny_arch(0), 1, 32, 1, LossConfig::default(), 2).unwrap();
    let config = TrainConfig { epochs: 20, batch_size: 8, ..TrainConfig::default() };
    let report = train(&mut model, &signals, None, &config).unwrap();
    // Interpolation makes the loss of a non-identity warp slightly positive.
    let (first, last) = (report.loss_trace[0], *report.loss_trace.last().unwrap());
    assert!(first < 1e-2 && last < 1e-3 && last <= first, "{:?}", report.loss_trace);
    assert!(mean_displacement(&model, &signals) < 1e-2);
}

#[test]
fn validation_split_picks_an_epoch() {
    let set = gen_synthetic::<f64>(&SynthSpec { per_class: 10, test_per_class: 1, len: 32, ..SynthSpec::default() }).unwrap();
    let tess = Tessellation::new(4, BoundaryCondition::ZeroBoundary).unwrap();
    let mut model = AlignmentModel::<f64>::new(&tess, &tiny_arch(0), 1, 32, 1, LossConfig::default(), 2).unwrap();
    let config = TrainConfig { epochs: 6, batch_size: 16, validation_fraction: Some(0.2), ..TrainConfig::default() };
    let report = train(&mut model, &set.train.signals, Some(&set.train.labels), &config).unwrap();
    assert_eq!(report.val_trace.len(), 6);
    let best = report.val_trace.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(report.val_trace[report.best_epoch], best);
}

#[test]
fn class_aware_losses_need_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let signals = random_signals(&mut rng, 4, 16);
    let tess = Tessellation::new(2, BoundaryCondition::ZeroBoundary).unwrap();
    let mut model =
        AlignmentModel::<f64>::new(&tess, &tiny_arch(0), 1, 16, 1, LossConfig::new(LossKind::IcaeTriplet), 0).unwrap();
    assert!(train(&mut model, &signals, None, &TrainConfig { epochs: 1, ..TrainConfig::default() }).is_err());
}

#[test]
fn multitask_head_separates_synthetic_classes() {
    // Nearly unwarped templates plus noise: linearly separable classes.
    let spec = SynthSpec { per_class: 15, test_per_class: 15, len: 64, alpha: 1e3, ..SynthSpec::default() };
    let set = gen_synthetic::<f64>(&spec).unwrap();
    let tess = Tessellation::new(8, BoundaryCondition::ZeroBoundary).unwrap();
    let arch = ArchSpec { blocks: vec![ConvSpec { kernel: 5, channels: 8 }, ConvSpec { kernel: 3, channels: 8 }], pool_width: 4, n_classes: 4 };
    let mut model = AlignmentModel::<f64>::new(&tess, &arch, 1, 64, 1, LossConfig::default(), 1).unwrap();
    let config = TrainConfig { epochs: 60, batch_size: 16, lr: 3e-3, multitask_weight: 1.0, ..TrainConfig::default() };
    train(&mut model, &set.train.signals, Some(&set.train.labels), &config).unwrap();
    let correct = set
        .test
        .signals
        .iter()
        .zip(&set.test.labels)
        .filter(|(s, &k)| model.classify(s).unwrap() == Some(k))
        .count();
    let accuracy = correct as f64 / set.test.len() as f64;
    assert!(accuracy >= 0.95, "{accuracy}");
}
