use rand::seq::SliceRandom;
use rand::Rng as _;
use uda_core::datasets::{one_hot, DatasetSpec, GlyphShift};
use uda_core::trainer::{evaluate, train, train_on_generated, Method, RunConfig, TargetEval, TrainError};
use uda_core::{rng_from_seed, Tensor};

fn quick(method: Method, seed: u64) -> RunConfig {
    let mut c = RunConfig::two_moons(method, seed);
    c.dataset = DatasetSpec::TwoMoons { n_per_domain: 60, noise: 0.1, rotation_deg: 45.0 };
    c.epochs = 8;
    c
}

#[test]
fn reruns_are_bit_identical() {
    for m in [Method::CLIV_TC, Method::CDAN] {
        let cfg = quick(m, 3);
        let (_, a) = train_on_generated(&cfg).unwrap();
        let (_, b) = train_on_generated(&cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.bundle, b.bundle);
    }
}

#[test]
fn source_only_ignores_target_inputs() {
    let cfg = quick(Method::SOURCE_ONLY, 1);
    let pair = cfg.dataset.generate(cfg.seed.data).unwrap();
    let view = pair.training_view();
    let real = train(&cfg, view, None, |_| {}).unwrap();

    let mut rng = rng_from_seed(99);
    let mut rows: Vec<usize> = (0..view.x_t.rows()).collect();
    rows.shuffle(&mut rng);
    let noise = Tensor::matrix(view.x_t.rows(), 2, (0..view.x_t.len()).map(|_| rng.random_range(-9.0..9.0)).collect());
    for fake in [view.x_t.gather_rows(&rows), noise] {
        let v = uda_core::datasets::TrainingView { x_t: &fake, ..view };
        let other = train(&cfg, v, None, |_| {}).unwrap();
        assert_eq!(other.bundle, real.bundle);
    }
}

fn moving_average(v: &[f64], w: usize) -> Vec<f64> {
    v.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

#[test]
fn source_loss_trends_down_on_every_builtin_dataset() {
    let specs = [
        DatasetSpec::TwoMoons { n_per_domain: 120, noise: 0.1, rotation_deg: 45.0 },
        DatasetSpec::ShiftedBlobs { classes: 3, n_per_domain: 120, dim: 2, shift: vec![1.0, 0.0], blob_std: 0.5 },
        DatasetSpec::Glyphs { n_per_domain: 80, size: 16, shift: GlyphShift::BrightnessBias(0.2) },
    ];
    for spec in specs {
        let mut cfg = RunConfig::new(Method::SOURCE_ONLY, 0);
        cfg.dataset = spec.clone();
        cfg.epochs = 40;
        cfg.batch_size = 16;
        let (_, out) = train_on_generated(&cfg).unwrap();
        let ce: Vec<f64> = out.history.iter().map(|r| r.losses.ce).collect();
        let ma = moving_average(&ce, 10);
        assert!(ma.last().unwrap() < ma.first().unwrap(), "{spec:?}: {ma:?}");
    }
}

#[test]
fn no_shift_means_no_gap() {
    let mut cfg = RunConfig::new(Method::SOURCE_ONLY, 2);
    cfg.dataset = DatasetSpec::ShiftedBlobs { classes: 3, n_per_domain: 600, dim: 2, shift: vec![0.0, 0.0], blob_std: 0.6 };
    cfg.epochs = 20;
    let (_, out) = train_on_generated(&cfg).unwrap();
    let last = out.history.last().unwrap();
    assert!((last.source_acc - last.target_acc.unwrap()).abs() <= 0.02, "{last:?}");
}

#[test]
fn records_are_well_formed() {
    let cfg = quick(Method::DANN_TC, 4);
    let (pair, out) = train_on_generated(&cfg).unwrap();
    assert_eq!(out.history.len(), cfg.epochs);
    for (i, r) in out.history.iter().enumerate() {
        assert_eq!(r.epoch, i);
        assert!((0.0..=1.0).contains(&r.source_acc));
        assert!((0.0..=1.0).contains(&r.target_acc.unwrap()));
        assert!(r.losses.is_finite() && r.lr > 0.0);
    }
    let last = out.history.last().unwrap();
    let acc = TargetEval::new(&pair).accuracy(&out.bundle).unwrap();
    assert_eq!(last.target_acc.unwrap(), acc);
}

#[test]
fn evaluation_examples() {
    let y = one_hot(&[0, 1, 1, 0], 2);
    let perfect = one_hot(&[0, 1, 1, 0], 2);
    // an empty evaluation set cannot be formed, so it never scores 0
    assert!(Tensor::new(&[0, 2], vec![]).is_err());
    let arch = uda_core::nn::Architecture::default();
    let b = uda_core::nn::ModelBundle::new(&arch, 0).unwrap();
    assert!(evaluate(&b, &Tensor::matrix(2, 2, vec![0.0; 4]), &one_hot(&[0, 1, 1], 2)).is_err());
    assert_eq!(uda_core::trainer::accuracy(&perfect, &y).unwrap(), 1.0);

    let mut rng = rng_from_seed(5);
    let n = 10_000;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let probs = Tensor::matrix(n, 2, (0..n).flat_map(|_| {
        let p: f64 = rng.random_range(0.0..1.0);
        [p, 1.0 - p]
    }).collect());
    let acc = uda_core::trainer::accuracy(&probs, &one_hot(&labels, 2)).unwrap();
    assert!((acc - 0.5).abs() <= 0.02, "{acc}");
}

#[test]
fn bad_configs_are_rejected_before_training() {
    let mut cfg = quick(Method::CLIV_TC, 0);
    cfg.epochs = 0;
    assert!(matches!(train_on_generated(&cfg), Err(TrainError::Config(_))));
    let mut cfg = quick(Method::CLIV_TC, 0);
    cfg.batch_size = 0;
    assert!(matches!(train_on_generated(&cfg), Err(TrainError::Config(_))));
    let mut cfg = quick(Method::DANN, 0);
    cfg.optimizer.base_lr = 1e200;
    assert!(matches!(train_on_generated(&cfg), Err(TrainError::NonFinite { .. }) | Err(TrainError::Numeric { .. })));
}
