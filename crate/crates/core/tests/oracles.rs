//! Independent reference computations for the Jacobian, VAT and augmentation
//! mixing code paths.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use uda_core::analysis::jacobians;
use uda_core::augment::{builtin_registry, mix_augment, sample_dirichlet, MixSpec, Modality, OpRegistry};
use uda_core::losses::{vat_loss_value, LossWeights};
use uda_core::nn::{Activation, Architecture, Layer, Mlp, ModelBundle};
use uda_core::{rng_from_seed, Tensor};

fn linear_bundle(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> ModelBundle {
    let arch = Architecture {
        input_dim: w1.rows(),
        hidden: vec![],
        feature_dim: w1.cols(),
        num_classes: w2.cols(),
        ..Architecture::default()
    };
    let mut b = ModelBundle::new(&arch, 0).unwrap();
    b.phi = Mlp::from_layers(vec![Layer { weight: w1, bias: b1 }], Activation::Relu).unwrap();
    b.classifier = Mlp::from_layers(vec![Layer { weight: w2, bias: b2 }], Activation::Relu).unwrap();
    b
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[test]
fn linear_softmax_jacobian_closed_form() {
    // logits = x·A + c with A = W1·W2; J = (diag(p) − p pᵀ)·Aᵀ
    let w1 = Tensor::matrix(3, 2, vec![0.5, -1.0, 0.3, 0.8, -0.7, 0.2]);
    let w2 = Tensor::matrix(2, 3, vec![1.0, -0.5, 0.25, 0.4, 0.9, -1.2]);
    let b1 = Tensor::matrix(1, 2, vec![0.1, -0.2]);
    let b2 = Tensor::matrix(1, 3, vec![0.0, 0.3, -0.1]);
    let a = w1.matmul(&w2).unwrap();
    let bias = b1.matmul(&w2).unwrap().zip_map(&b2, |p, q| p + q);
    let bundle = linear_bundle(w1, b1, w2, b2);
    let x = Tensor::matrix(2, 3, vec![0.2, -1.0, 0.5, 1.5, 0.3, -0.4]);
    let js = jacobians(&bundle, &x).unwrap();
    for (i, j) in js.iter().enumerate() {
        let logits: Vec<f64> = (0..3).map(|c| (0..3).map(|k| x.at(i, k) * a.at(k, c)).sum::<f64>() + bias.at(0, c)).collect();
        let p = softmax(&logits);
        for c in 0..3 {
            for k in 0..3 {
                let expect: f64 = (0..3).map(|m| ((c == m) as u8 as f64 * p[c] - p[c] * p[m]) * a.at(k, m)).sum();
                assert!((j.at(c, k) - expect).abs() < 1e-12, "sample {i} J[{c},{k}]");
            }
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let arch = Architecture { input_dim: 3, num_classes: 3, activation: Activation::Tanh, ..Architecture::default() };
    let bundle = ModelBundle::new(&arch, 5).unwrap();
    let x = Tensor::matrix(2, 3, vec![0.3, -0.2, 0.9, -1.1, 0.4, 0.05]);
    let js = jacobians(&bundle, &x).unwrap();
    let h = 1e-6;
    for i in 0..2 {
        for k in 0..3 {
            let mut xp = x.row(i).to_vec();
            let mut xm = xp.clone();
            xp[k] += h;
            xm[k] -= h;
            let pp = bundle.predict(&Tensor::matrix(1, 3, xp)).unwrap();
            let pm = bundle.predict(&Tensor::matrix(1, 3, xm)).unwrap();
            for c in 0..3 {
                let fd = (pp.at(0, c) - pm.at(0, c)) / (2.0 * h);
                assert!((js[i].at(c, k) - fd).abs() < 1e-7, "J[{c},{k}] {} vs {fd}", js[i].at(c, k));
            }
        }
    }
}

#[test]
fn vat_close_to_brute_force_maximum() {
    // small logit slopes keep softmax in its linear regime over the ε-ball,
    // so the model is effectively a linear probability model
    let w1 = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let b1 = Tensor::matrix(1, 2, vec![0.0, 0.0]);
    let w2 = Tensor::matrix(2, 2, vec![0.24, -0.16, 0.12, 0.18]);
    let b2 = Tensor::matrix(1, 2, vec![0.1, -0.1]);
    let bundle = linear_bundle(w1, b1, w2, b2);
    let point = [0.3, -0.4];
    let x = Tensor::matrix(1, 2, point.to_vec());
    let eps = 0.5;
    let weights = LossWeights { vat_eps: eps, ..LossWeights::default() };
    let p0 = bundle.predict(&x).unwrap();

    let mut best: f64 = 0.0;
    for k in 0..720 {
        let t = 2.0 * std::f64::consts::PI * k as f64 / 720.0;
        let xr = Tensor::matrix(1, 2, vec![point[0] + eps * t.cos(), point[1] + eps * t.sin()]);
        let p = bundle.predict(&xr).unwrap();
        let d: f64 = (0..2).map(|c| (p.at(0, c) - p0.at(0, c)).powi(2)).sum();
        best = best.max(d);
    }
    for seed in 0..5 {
        let v = vat_loss_value(&bundle, &x, &weights, &[1.0, 1.0], &mut rng_from_seed(seed)).unwrap();
        assert!(v >= 0.9 * best && v <= best * 1.01, "seed {seed}: vat {v} vs brute force {best}");
    }
}

#[test]
fn vat_with_zero_radius_is_zero() {
    let arch = Architecture::default();
    let bundle = ModelBundle::new(&arch, 1).unwrap();
    let x = Tensor::matrix(3, 2, vec![0.0, 1.0, 0.5, -0.5, 2.0, 0.2]);
    let weights = LossWeights { vat_eps: 0.0, ..LossWeights::default() };
    assert_eq!(vat_loss_value(&bundle, &x, &weights, &[1.0, 1.0], &mut rng_from_seed(0)).unwrap(), 0.0);
}

/// Re-executes the documented sampling order for the point registry with
/// the op formulas written out by hand.
fn replay_points(x: &Tensor, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let ranges = [(0.01, 0.1), (-15.0, 15.0), (0.9, 1.1), (-0.1, 0.1)];
    let apply = |op: usize, s: f64, p: [f64; 2], rng: &mut uda_core::Rng| -> [f64; 2] {
        match op {
            0 => {
                let n0: f64 = rng.sample(StandardNormal);
                let n1: f64 = rng.sample(StandardNormal);
                [p[0] + s * n0, p[1] + s * n1]
            }
            1 => {
                let t = s.to_radians();
                [t.cos() * p[0] - t.sin() * p[1], t.sin() * p[0] + t.cos() * p[1]]
            }
            2 => [s * p[0], s * p[1]],
            _ => {
                let dy: f64 = rng.random_range(-0.1..0.1);
                [p[0] + s, p[1] + dy]
            }
        }
    };
    let mut out = Vec::new();
    for r in 0..x.rows() {
        let alphas: Vec<f64> = if k == 1 {
            vec![1.0]
        } else {
            let g = Gamma::new(1.0, 1.0).unwrap();
            let d: Vec<f64> = (0..k).map(|_| g.sample(&mut rng)).collect();
            let s: f64 = d.iter().sum();
            d.into_iter().map(|v| v / s).collect()
        };
        let mut mixed = [0.0, 0.0];
        for a in alphas {
            let i = rng.random_range(0..4);
            let s1 = rng.random_range(ranges[i].0..ranges[i].1);
            let second = if k > 1 && rng.random_bool(0.5) {
                let j = rng.random_range(0..4);
                Some((j, rng.random_range(ranges[j].0..ranges[j].1)))
            } else {
                None
            };
            let mut p = apply(i, s1, [x.at(r, 0), x.at(r, 1)], &mut rng);
            if let Some((j, s2)) = second {
                p = apply(j, s2, p, &mut rng);
            }
            mixed[0] += a * p[0];
            mixed[1] += a * p[1];
        }
        out.extend(mixed);
    }
    out
}

#[test]
fn mix_augment_matches_replay() {
    let x = Tensor::matrix(4, 2, vec![0.0, 1.0, 0.5, -0.25, 1.5, 0.3, -0.8, 0.9]);
    let reg = builtin_registry(Modality::Points2d);
    for (k, seed) in [(3, 17), (1, 4), (4, 99)] {
        let got = mix_augment(&x, &reg, &MixSpec { k, concentration: 1.0 }, &mut rng_from_seed(seed)).unwrap();
        let expect = replay_points(&x, k, seed);
        for (a, b) in got.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "K={k}: {a} vs {b}");
        }
    }
}

#[test]
fn dirichlet_marginal_mean_and_simplex() {
    let mut rng = rng_from_seed(3);
    let n = 100_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let a = sample_dirichlet(2, 1.0, &mut rng).unwrap();
        assert!((a[0] + a[1] - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|&v| v >= 0.0));
        sum[0] += a[0];
        sum[1] += a[1];
    }
    assert!((sum[0] / n as f64 - 0.5).abs() < 0.01);
    assert!((sum[1] / n as f64 - 0.5).abs() < 0.01);
    for k in 1..9 {
        let a = sample_dirichlet(k, 1.0, &mut rng).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(sample_dirichlet(0, 1.0, &mut rng).is_err());
}

#[test]
fn image_mix_stays_in_unit_interval() {
    let mut rng = rng_from_seed(12);
    let x = Tensor::matrix(3, 64, (0..192).map(|_| rng.random_range(0.0..1.0)).collect());
    let reg = builtin_registry(Modality::Image);
    let out = mix_augment(&x, &reg, &MixSpec::default(), &mut rng).unwrap();
    assert_eq!(out.shape(), x.shape());
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn identity_registry_returns_input() {
    let x = Tensor::matrix(2, 2, vec![0.25, -1.0, 3.0, 0.5]);
    let reg = OpRegistry::identity(Modality::Points2d);
    for k in [1, 2, 5] {
        let out = mix_augment(&x, &reg, &MixSpec { k, concentration: 1.0 }, &mut rng_from_seed(k as u64)).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
