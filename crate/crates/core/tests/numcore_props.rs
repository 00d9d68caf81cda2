use dblf::numcore::checkpoint::{read_params, write_params};
use dblf::numcore::{grad_check, Adam, AdamConfig, DArray, ParamStore, Tape};
use proptest::prelude::*;

fn matrix(r: usize, c: usize) -> impl Strategy<Value = DArray> {
    prop::collection::vec(-3.0..3.0f64, r * c).prop_map(move |v| DArray::matrix(r, c, v).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..6, 1usize..6, 1usize..6)
}

proptest! {
    #[test]
    fn matmul_matches_naive_loop(((m, k, n), seed) in (dims(), any::<u64>())) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect() };
        let (a, b) = (draw(m * k), draw(k * n));
        let mut t = Tape::new();
        let va = t.input(DArray::matrix(m, k, a.clone()).unwrap());
        let vb = t.input(DArray::matrix(k, n, b.clone()).unwrap());
        let c = t.matmul(va, vb).unwrap();
        let got = t.value(c).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                prop_assert!((got[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions(x in matrix(4, 7)) {
        let mut t = Tape::new();
        let v = t.input(x);
        let y = t.softmax(v, 1).unwrap();
        for row in t.value(y).data().chunks(7) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn layer_norm_standardises_rows(x in matrix(3, 8)) {
        prop_assume!(x.data().chunks(8).all(|r| r.iter().any(|v| (v - r[0]).abs() > 1e-3)));
        let mut t = Tape::new();
        let v = t.input(x);
        let g = t.input(DArray::filled(vec![8], 1.0));
        let b = t.input(DArray::zeros(vec![8]));
        let y = t.layer_norm(v, g, b, 1e-9).unwrap();
        for row in t.value(y).data().chunks(8) {
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn composite_gradient_matches_differences(x in matrix(3, 4), w in matrix(4, 2)) {
        let err = grad_check(
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.tanh(h)?;
                let s = t.softmax(h, 1)?;
                let l = t.log(s)?;
                t.mean(l)
            },
            &[x, w],
            1e-6,
            0,
        )
        .unwrap();
        prop_assert!(err < 1e-4, "{}", err);
    }

    #[test]
    fn checkpoint_round_trip(vals in prop::collection::vec(-1e6..1e6f64, 1..30)) {
        let mut store = ParamStore::new();
        store.add("a.w", DArray::vector(vals.clone())).unwrap();
        store.add_frozen("meta", DArray::scalar(3.0)).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &store).unwrap();
        let back = read_params(&mut buf.as_slice()).unwrap();
        prop_assert!(back.same_values(&store));
        let id = back.require("a.w").unwrap();
        prop_assert_eq!(back.value(id).data(), vals.as_slice());
    }
}

#[test]
fn adam_descends_a_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("x", DArray::vector(vec![3.0, -2.0])).unwrap();
    let mut opt = Adam::new(AdamConfig::adam(0.1)).unwrap();
    for _ in 0..300 {
        store.zero_grads();
        let mut t = Tape::new();
        let x = t.param(&store, id);
        let y = t.square(x).unwrap();
        let y = t.sum(y).unwrap();
        t.backward(y, &mut [&mut store]).unwrap();
        opt.step(&mut store).unwrap();
    }
    assert!(store.value(id).data().iter().all(|v| v.abs() < 1e-2), "{:?}", store.value(id).data());
}
