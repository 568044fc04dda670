use autodiff::{checkpoint, ParamSet, Tape, Tensor};
use proptest::prelude::*;

fn matrix(max: usize) -> impl Strategy<Value = Tensor> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0..10.0f64, r * c)
            .prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transpose_is_an_involution(m in matrix(6)) {
        prop_assert_eq!(m.transpose().unwrap().transpose().unwrap(), m);
    }

    #[test]
    fn sum_gradient_is_ones(m in matrix(6)) {
        let tape = Tape::new();
        let x = tape.leaf(m.clone());
        let g = tape.backward(x.sum()).unwrap().get(x);
        prop_assert_eq!(g, Tensor::ones(m.shape()));
    }

    #[test]
    fn matmul_gradient_matches_closed_form(a in matrix(5), seed in 0u64..1000) {
        // d/dA sum(A B) = 1 B^T for any B.
        let k = a.cols();
        let b = Tensor::matrix(k, 3, (0..k * 3).map(|i| ((i as u64 * 7 + seed) % 11) as f64 - 5.0).collect()).unwrap();
        let tape = Tape::new();
        let av = tape.leaf(a.clone());
        let loss = av.matmul(tape.constant(b.clone())).unwrap().sum();
        let g = tape.backward(loss).unwrap().get(av);
        let expect = Tensor::ones(&[a.rows(), 3]).matmul(&b.transpose().unwrap()).unwrap();
        prop_assert_eq!(g, expect);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(ms in prop::collection::vec(matrix(4), 1..5)) {
        let mut params = ParamSet::new();
        for (i, m) in ms.into_iter().enumerate() {
            params.insert(format!("layer.{i}.weight"), m);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        checkpoint::save(&params, &path).unwrap();
        prop_assert_eq!(checkpoint::load(&path).unwrap(), params);
    }
}
