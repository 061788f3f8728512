use proptest::prelude::*;
use uda_core::augment::{builtin_registry, mix_augment, sample_dirichlet, MixSpec, Modality};
use uda_core::nn::{ema_update, Architecture, ModelBundle};
use uda_core::{rng_from_seed, Graph, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-20.0f64..20.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in matrix(4, 5)) {
        let mut g = Graph::new();
        let a = g.leaf(x);
        let s = g.softmax(a).unwrap();
        let p = g.value(s);
        for r in 0..4 {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.row(r).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn reversal_is_exact(x in matrix(3, 2), w in matrix(3, 2), lam in -3.0f64..3.0) {
        let mut g = Graph::new();
        let a = g.leaf(x.clone());
        let r = g.grad_reversal(a, lam).unwrap();
        prop_assert_eq!(g.value(r), &x);
        let wl = g.leaf(w.clone());
        let m = g.mul(r, wl).unwrap();
        let s = g.sum(m).unwrap();
        let grads = g.backward(s).unwrap();
        for (gv, wv) in grads.wrt(a).data().iter().zip(w.data()) {
            prop_assert_eq!(*gv, -lam * wv);
        }
    }

    #[test]
    fn stop_gradient_blocks_everything(x in matrix(2, 3)) {
        let mut g = Graph::new();
        let a = g.leaf(x);
        let st = g.stop_gradient(a).unwrap();
        let sq = g.square(st).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        prop_assert!(grads.wrt(a).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pinned_stops_replace_values(x in matrix(2, 2), pin in matrix(2, 2)) {
        let mut g = Graph::with_pinned_stops(vec![pin.clone()]);
        let a = g.leaf(x);
        let st = g.stop_gradient(a).unwrap();
        prop_assert_eq!(g.value(st), &pin);
        prop_assert_eq!(g.stop_values(), vec![pin]);
    }

    #[test]
    fn backward_is_deterministic(x in matrix(3, 3)) {
        let run = || {
            let mut g = Graph::new();
            let a = g.leaf(x.clone());
            let t = g.tanh(a).unwrap();
            let s = g.softmax(t).unwrap();
            let l = g.log(s).unwrap();
            let m = g.mean(l).unwrap();
            (g.value(m).item().to_bits(), g.backward(m).unwrap().wrt(a))
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn dirichlet_on_simplex(k in 1usize..12, conc in 0.05f64..10.0, seed in any::<u64>()) {
        let a = sample_dirichlet(k, conc, &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(a.len(), k);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mixing_keeps_shape_and_is_seeded(k in 1usize..6, seed in any::<u64>(), x in matrix(5, 2)) {
        let reg = builtin_registry(Modality::Points2d);
        let spec = MixSpec { k, concentration: 1.0 };
        let a = mix_augment(&x, &reg, &spec, &mut rng_from_seed(seed)).unwrap();
        let b = mix_augment(&x, &reg, &spec, &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(a.shape(), x.shape());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ema_is_affine(beta in 0.0f64..1.0, c in -4.0f64..4.0, seed in 0u64..1000) {
        // scaling both teacher and student by c scales the update by c
        let mut b = ModelBundle::new(&Architecture { teacher: true, hidden: vec![4], feature_dim: 3, ..Architecture::default() }, seed).unwrap();
        for p in b.phi.params_mut() {
            p.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * i as f64);
        }
        let mut scaled = b.clone();
        for p in scaled.phi.params_mut().into_iter().chain(scaled.classifier.params_mut()) {
            p.data_mut().iter_mut().for_each(|v| *v *= c);
        }
        let t = scaled.teacher.as_mut().unwrap();
        for p in t.phi.params_mut().into_iter().chain(t.classifier.params_mut()) {
            p.data_mut().iter_mut().for_each(|v| *v *= c);
        }
        ema_update(&mut b, beta).unwrap();
        ema_update(&mut scaled, beta).unwrap();
        let (t1, t2) = (b.teacher.unwrap(), scaled.teacher.unwrap());
        for (p, q) in t1.phi.params().into_iter().zip(t2.phi.params()) {
            for (u, v) in p.data().iter().zip(q.data()) {
                prop_assert!((c * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }
}

#[test]
fn forward_golden_vector() {
    // frozen from this implementation for the default moons architecture
    let b = ModelBundle::new(&Architecture { teacher: true, ..Architecture::default() }, 42).unwrap();
    let x = Tensor::matrix(2, 2, vec![0.5, -0.25, -1.0, 0.75]);
    let p = b.predict(&x).unwrap();
    for (got, want) in p.data().iter().zip(GOLDEN_PROBS) {
        assert!((got - want).abs() < 1e-12, "{:?}", p.data());
    }
    let (_, teacher_view) = b.forward_h(&x, true).unwrap();
    assert_eq!(teacher_view, p);
}

const GOLDEN_PROBS: [f64; 4] = [0.4752149247376935, 0.5247850752623064, 0.4468228994446345, 0.5531771005553655];
