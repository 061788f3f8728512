use rand::Rng as _;
use uda_core::augment::{builtin_registry, mix_augment, MixSpec, Modality, OpRegistry};
use uda_core::gradcheck::{check_architecture, CheckBatch, LossKind};
use uda_core::losses::{
    aug_consistency_value, cdan_loss, cliv_loss, cross_entropy_probs, dann_loss, total_objective, vat_loss,
    vat_loss_value, LossWeights, TcContext, TcSample,
};
use uda_core::nn::{
    Activation, AdvKind, Architecture, ClivHeads, Discriminator, Mlp, ModelBundle, SgdConfig, SgdState,
};
use uda_core::{rng_from_seed, Graph, Tensor};

fn uniform(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn constant_bundle(adv: AdvKind) -> ModelBundle {
    let arch = Architecture { adversary: adv, teacher: true, ..Architecture::default() };
    let mut b = ModelBundle::new(&arch, 2).unwrap();
    b.classifier = Mlp::zeros(&[16, 2], Activation::Relu).unwrap();
    b.teacher.as_mut().unwrap().classifier = b.classifier.clone();
    b
}

#[test]
fn constant_model_has_zero_consistency() {
    let b = constant_bundle(AdvKind::None);
    let x = uniform(6, 2, 1);
    let w = LossWeights::default();
    assert_eq!(vat_loss_value(&b, &x, &w, &[1.0, 1.0], &mut rng_from_seed(0)).unwrap(), 0.0);
    let reg = builtin_registry(Modality::Points2d);
    assert_eq!(aug_consistency_value(&b, &x, &reg, &MixSpec::default(), &mut rng_from_seed(0)).unwrap(), 0.0);
    let tc = TcContext { registry: &reg, mix: &MixSpec::default(), input_scale: &[1.0, 1.0] };
    let sample = TcSample::draw(&b, &x, &w, &tc, &mut rng_from_seed(4)).unwrap();
    let y = uda_core::datasets::one_hot(&[0, 1, 0, 1, 0, 1], 2);
    let obj = total_objective(&b, &x, &y, &x, &w, AdvKind::None, Some(&sample), 0.0).unwrap();
    assert_eq!(obj.breakdown.tc, 0.0);
}

#[test]
fn identity_augmentation_with_matching_teacher_is_zero() {
    let arch = Architecture { teacher: true, ..Architecture::default() };
    let b = ModelBundle::new(&arch, 9).unwrap();
    let x = uniform(5, 2, 3);
    let reg = OpRegistry::identity(Modality::Points2d);
    let v = aug_consistency_value(&b, &x, &reg, &MixSpec::default(), &mut rng_from_seed(1)).unwrap();
    assert!(v.abs() < 1e-24, "{v}");
}

#[test]
fn aug_consistency_matches_manual_recomputation() {
    let arch = Architecture { teacher: true, ..Architecture::default() };
    let mut b = ModelBundle::new(&arch, 4).unwrap();
    // make the teacher differ from the student
    for p in b.teacher.as_mut().unwrap().phi.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v *= 0.9);
    }
    let pair = uda_core::datasets::two_moons(20, 0.1, 45.0, 3).unwrap();
    let x = pair.x_t().gather_rows(&(0..8).collect::<Vec<_>>());
    let reg = builtin_registry(Modality::Points2d);
    let spec = MixSpec::default();
    let got = aug_consistency_value(&b, &x, &reg, &spec, &mut rng_from_seed(6)).unwrap();

    let x_aug = mix_augment(&x, &reg, &spec, &mut rng_from_seed(6)).unwrap();
    let t = b.teacher.as_ref().unwrap();
    let mut teacher = b.clone();
    teacher.phi = t.phi.clone();
    teacher.classifier = t.classifier.clone();
    let p_t = teacher.predict(&x).unwrap();
    let p_s = b.predict(&x_aug).unwrap();
    let expect: f64 = p_t.data().iter().zip(p_s.data()).map(|(a, c)| (a - c).powi(2)).sum::<f64>() / 8.0;
    assert!((got - expect).abs() < 1e-14, "{got} vs {expect}");
}

#[test]
fn zero_weights_reduce_total_to_cross_entropy() {
    let arch = check_architecture(LossKind::Total, 3, 3);
    let b = ModelBundle::new(&arch, 7).unwrap();
    let batch = CheckBatch::random(6, 3, 3, &mut rng_from_seed(8));
    let w = LossWeights { lambda_adv: 0.0, lambda_tc: 0.0, ..LossWeights::default() };
    let obj = total_objective(&b, &batch.x_s, &batch.y_s, &batch.x_t, &w, AdvKind::Cliv, Some(&batch.sample), 1.0).unwrap();
    let ce = cross_entropy_probs(&b.predict(&batch.x_s).unwrap(), &batch.y_s).unwrap();
    assert_eq!(obj.breakdown.total, obj.breakdown.ce);
    assert!((obj.breakdown.ce - ce).abs() < 1e-12);
}

fn zero_head(input: usize, out: usize) -> Mlp {
    Mlp::zeros(&[input, 5, out], Activation::Relu).unwrap()
}

fn eval_adv(disc: &Discriminator, kind: AdvKind, z_s: &Tensor, y_s: &Tensor, z_t: &Tensor, y_t: &Tensor) -> f64 {
    let mut g = Graph::new();
    let d = disc.bind(&mut g);
    let (zs, ys, zt, yt) = (g.leaf(z_s.clone()), g.leaf(y_s.clone()), g.leaf(z_t.clone()), g.leaf(y_t.clone()));
    let l = match kind {
        AdvKind::Dann => dann_loss(&mut g, &d, zs, zt),
        AdvKind::Cliv => cliv_loss(&mut g, &d, zs, ys, zt, yt),
        AdvKind::Cdan => cdan_loss(&mut g, &d, zs, ys, zt, yt),
        AdvKind::None => unreachable!(),
    }
    .unwrap();
    g.value(l).item()
}

#[test]
fn half_discriminator_gives_log_two() {
    let (z_s, z_t) = (uniform(4, 3, 1), uniform(6, 3, 2));
    let y_s = uda_core::datasets::one_hot(&[0, 1, 1, 0], 2);
    let y_t = Tensor::matrix(6, 2, vec![0.5; 12]);
    let ln2 = std::f64::consts::LN_2;
    let dann = eval_adv(&Discriminator::Dann(zero_head(3, 1)), AdvKind::Dann, &z_s, &y_s, &z_t, &y_t);
    assert!((dann - ln2).abs() < 1e-15);
    let cdan = eval_adv(&Discriminator::Cdan(zero_head(6, 1)), AdvKind::Cdan, &z_s, &y_s, &z_t, &y_t);
    assert!((cdan - ln2).abs() < 1e-15);
    // every row carries unit label mass on each side
    let cliv = eval_adv(&Discriminator::Cliv(ClivHeads::Shared(zero_head(3, 2))), AdvKind::Cliv, &z_s, &y_s, &z_t, &y_t);
    assert!((cliv - ln2).abs() < 1e-15);
}

#[test]
fn single_class_collapses_to_domain_loss() {
    let mut rng = rng_from_seed(3);
    let head = Mlp::new(&[3, 5, 1], Activation::Relu, &mut rng).unwrap();
    let (z_s, z_t) = (uniform(4, 3, 5), uniform(5, 3, 6));
    let (ones_s, ones_t) = (Tensor::matrix(4, 1, vec![1.0; 4]), Tensor::matrix(5, 1, vec![1.0; 5]));
    let dann = eval_adv(&Discriminator::Dann(head.clone()), AdvKind::Dann, &z_s, &ones_s, &z_t, &ones_t);
    let cdan = eval_adv(&Discriminator::Cdan(head.clone()), AdvKind::Cdan, &z_s, &ones_s, &z_t, &ones_t);
    let cliv = eval_adv(&Discriminator::Cliv(ClivHeads::Shared(head.clone())), AdvKind::Cliv, &z_s, &ones_s, &z_t, &ones_t);
    let sep = eval_adv(&Discriminator::Cliv(ClivHeads::Separate(vec![head])), AdvKind::Cliv, &z_s, &ones_s, &z_t, &ones_t);
    assert!((dann - cdan).abs() < 1e-12);
    assert!((dann - cliv).abs() < 1e-12);
    assert!((dann - sep).abs() < 1e-12);
}

#[test]
fn cliv_pseudo_labels_receive_no_gradient() {
    let mut rng = rng_from_seed(11);
    let disc = Discriminator::Cliv(ClivHeads::Shared(Mlp::new(&[3, 5, 2], Activation::Relu, &mut rng).unwrap()));
    let mut g = Graph::new();
    let d = disc.bind(&mut g);
    let zs = g.leaf(uniform(4, 3, 1));
    let ys = g.leaf(uda_core::datasets::one_hot(&[0, 1, 1, 0], 2));
    let zt = g.leaf(uniform(4, 3, 2));
    let yt = g.leaf(Tensor::matrix(4, 2, vec![0.3, 0.7, 0.9, 0.1, 0.5, 0.5, 0.2, 0.8]));
    let l = cliv_loss(&mut g, &d, zs, ys, zt, yt).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.wrt(yt).data().iter().all(|&v| v == 0.0));
    assert!(grads.wrt(zt).data().iter().any(|&v| v != 0.0));
}

#[test]
fn vat_never_reaches_the_teacher() {
    let arch = check_architecture(LossKind::Vat, 3, 3);
    let b = ModelBundle::new(&arch, 2).unwrap();
    let batch = CheckBatch::random(5, 3, 3, &mut rng_from_seed(3));
    let mut g = Graph::new();
    let bound = b.bind(&mut g);
    let x = g.leaf(batch.x_t.clone());
    let t = bound.pseudo_targets(&mut g, x).unwrap();
    let l = vat_loss(&mut g, &bound, x, &batch.sample.vat_r, t).unwrap();
    let grads = g.backward(l).unwrap();
    for id in bound.teacher_ids() {
        assert!(grads.wrt(id).data().iter().all(|&v| v == 0.0));
    }
    assert!(bound.student_ids().iter().any(|&id| grads.wrt(id).data().iter().any(|&v| v != 0.0)));
}

#[test]
fn reversal_sign_flips_feature_gradient() {
    let arch = Architecture { adversary: AdvKind::Dann, ..check_architecture(LossKind::Dann, 3, 3) };
    let b = ModelBundle::new(&arch, 5).unwrap();
    let batch = CheckBatch::random(6, 3, 3, &mut rng_from_seed(2));
    let adv_only = LossWeights { lambda_adv: 1.0, lambda_tc: 0.0, ..LossWeights::default() };
    let no_adv = LossWeights { lambda_adv: 0.0, ..adv_only };
    let phi_grads = |w: &LossWeights, lam: f64| {
        let obj = total_objective(&b, &batch.x_s, &batch.y_s, &batch.x_t, w, AdvKind::Dann, None, lam).unwrap();
        let g = obj.student_grads().unwrap();
        g[..b.phi.params().len()].to_vec()
    };
    let ce = phi_grads(&no_adv, 0.6);
    let plus = phi_grads(&adv_only, 0.6);
    let minus = phi_grads(&adv_only, -0.6);
    for ((c, p), m) in ce.iter().zip(&plus).zip(&minus) {
        for ((cv, pv), mv) in c.data().iter().zip(p.data()).zip(m.data()) {
            let (ap, am) = (pv - cv, mv - cv);
            assert!((ap + am).abs() <= 1e-12 * (1.0 + ap.abs()), "{ap} vs {am}");
        }
    }
}

#[test]
fn discriminator_separates_separable_features() {
    // labels are irrelevant here: train only the domain head on fixed z
    let z_s = Tensor::matrix(20, 2, (0..40).map(|i| if i % 2 == 0 { 3.0 + 0.01 * i as f64 } else { 0.5 }).collect());
    let z_t = Tensor::matrix(20, 2, (0..40).map(|i| if i % 2 == 0 { -3.0 - 0.01 * i as f64 } else { 0.5 }).collect());
    let mut head = Mlp::new(&[2, 8, 1], Activation::Relu, &mut rng_from_seed(1)).unwrap();
    let cfg = SgdConfig { base_lr: 0.1, ..SgdConfig::default() };
    let mut sgd = SgdState::new(cfg, &head.params());
    let loss_of = |head: &Mlp| -> (f64, Vec<Tensor>) {
        let disc = Discriminator::Dann(head.clone());
        let mut g = Graph::new();
        let d = disc.bind(&mut g);
        let (zs, zt) = (g.leaf(z_s.clone()), g.leaf(z_t.clone()));
        let l = dann_loss(&mut g, &d, zs, zt).unwrap();
        let grads = g.backward(l).unwrap();
        (g.value(l).item(), d.param_ids().into_iter().map(|id| grads.wrt(id)).collect())
    };
    let start = loss_of(&head).0;
    for _ in 0..200 {
        let (_, grads) = loss_of(&head);
        sgd.step(&mut head.params_mut(), &grads, cfg.base_lr).unwrap();
    }
    let end = loss_of(&head).0;
    assert!(end < 0.01 && end < start, "{start} -> {end}");
}

/// Frozen from this implementation; guards against silent drift in the VAT
/// search, the mixing order or the consistency distance.
#[test]
fn tc_golden_value() {
    let arch = Architecture { teacher: true, ..Architecture::default() };
    let b = ModelBundle::new(&arch, 21).unwrap();
    let pair = uda_core::datasets::two_moons(16, 0.1, 45.0, 22).unwrap();
    let view = pair.training_view();
    let reg = builtin_registry(Modality::Points2d);
    let scale = uda_core::losses::column_std(view.x_t);
    let tc = TcContext { registry: &reg, mix: &MixSpec::default(), input_scale: &scale };
    let w = LossWeights::default();
    let sample = TcSample::draw(&b, view.x_t, &w, &tc, &mut rng_from_seed(23)).unwrap();
    let obj = total_objective(&b, view.x_s, view.y_s, view.x_t, &w, AdvKind::None, Some(&sample), 0.0).unwrap();
    let v = obj.breakdown.tc;
    assert!((v - GOLDEN_TC).abs() < 1e-12, "tc {v:?}");
}

const GOLDEN_TC: f64 = 0.004612675847549713;
