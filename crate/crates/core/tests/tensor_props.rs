use avel_core::nn::ParamStore;
use avel_core::nn::Session;
use avel_core::tensor::{central_difference, Tape, Tensor};
use proptest::prelude::*;

fn softmax_of(x: &[f64]) -> Vec<f64> {
    let mut t = Tape::new();
    let v = t.constant(Tensor::vector(x.to_vec()).unwrap());
    let y = t.softmax(v).unwrap();
    t.data(y).to_vec()
}

proptest! {
    #[test]
    fn softmax_is_on_the_simplex(x in prop::collection::vec(-700.0f64..700.0, 1..40)) {
        let y = softmax_of(&x);
        prop_assert!(y.iter().all(|&p| p >= 0.0));
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn softmax_ignores_constant_shifts(x in prop::collection::vec(-50.0f64..50.0, 1..20), c in -100.0f64..100.0) {
        let a = softmax_of(&x);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let b = softmax_of(&shifted);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() <= 1e-12, "{p} vs {q}");
        }
    }

    #[test]
    fn forward_values_are_bit_identical(
        a in prop::collection::vec(-3.0f64..3.0, 6),
        b in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let run = || {
            let mut t = Tape::new();
            let x = t.constant(Tensor::matrix(2, 3, a.clone()).unwrap());
            let w = t.constant(Tensor::matrix(3, 2, b.clone()).unwrap());
            let y = t.matmul(x, w).unwrap();
            let y = t.tanh(y);
            let y = t.reshape(y, vec![4]).unwrap();
            let y = t.softmax(y).unwrap();
            let s = t.sum(y);
            let l = t.ln(s);
            t.data(l).iter().chain(t.data(y)).map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn elementwise_gradients_match_differences(x in prop::collection::vec(0.1f64..2.0, 1..6)) {
        let f = |v: &[f64]| -> f64 { v.iter().map(|a| a.sqrt() / (1.0 + (-a).exp())).sum() };
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(x.clone()).unwrap());
        let mut s = Session::new(&store);
        let v = s.param(id);
        let r = s.sqrt(v);
        let g = s.sigmoid(v);
        let m = s.mul(r, g).unwrap();
        let l = s.sum(m);
        let grads = s.backward(l).unwrap();
        let numeric = central_difference(&[x.clone()], 1e-6, |w| f(&w[0]));
        for (a, n) in grads.get(id).unwrap().iter().zip(&numeric[0]) {
            prop_assert!((a - n).abs() <= 1e-6 * n.abs().max(1.0));
        }
    }
}
