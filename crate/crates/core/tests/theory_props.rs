use dblf::theory::{geometric_bound, stochastic_bound, w1_empirical};
use proptest::prelude::*;

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 1..40)
}

proptest! {
    #[test]
    fn w1_is_symmetric(p in sample(), q in sample()) {
        let a = w1_empirical(&p, &q).unwrap();
        let b = w1_empirical(&q, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn w1_triangle(p in sample(), q in sample(), r in sample()) {
        let pq = w1_empirical(&p, &q).unwrap();
        let qr = w1_empirical(&q, &r).unwrap();
        let pr = w1_empirical(&p, &r).unwrap();
        prop_assert!(pr <= pq + qr + 1e-9);
    }

    #[test]
    fn w1_of_a_shift(p in sample(), c in -5.0..5.0f64) {
        let q: Vec<f64> = p.iter().map(|x| x + c).collect();
        prop_assert!((w1_empirical(&p, &q).unwrap() - c.abs()).abs() < 1e-9);
        prop_assert_eq!(w1_empirical(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn geometric_bound_grows_with_delay(l in 0.0..2.0f64, eps in 0.0..1.0f64, d in 1usize..60) {
        prop_assert!(geometric_bound(l, eps, d + 1) >= geometric_bound(l, eps, d));
    }

    #[test]
    fn geometric_bound_closed_form(l in 0.1..1.9f64, eps in 0.0..1.0f64, d in 1usize..40) {
        prop_assume!((l - 1.0).abs() > 1e-3);
        let closed = eps * (l.powi(d as i32) - 1.0) / (l - 1.0);
        prop_assert!((geometric_bound(l, eps, d) - closed).abs() <= 1e-9 * closed.max(1.0));
    }

    #[test]
    fn point_mass_delay_is_deterministic_bound(l in 0.0..2.0f64, eps in 0.0..1.0f64, d in 1usize..30) {
        let mut dist = vec![0.0; d];
        dist[d - 1] = 1.0;
        prop_assert_eq!(stochastic_bound(l, eps, &dist).unwrap(), geometric_bound(l, eps, d));
    }

    #[test]
    fn stochastic_bound_lies_between_extremes(l in 0.0..2.0f64, eps in 0.0..1.0f64, d in 1usize..30) {
        let dist = vec![1.0 / d as f64; d];
        let s = stochastic_bound(l, eps, &dist).unwrap();
        prop_assert!(s >= geometric_bound(l, eps, 1) - 1e-12 && s <= geometric_bound(l, eps, d) + 1e-12);
    }
}

#[test]
fn stochastic_bound_rejects_bad_weights() {
    assert!(stochastic_bound(1.0, 0.1, &[]).is_err());
    assert!(stochastic_bound(1.0, 0.1, &[0.5, 0.6]).is_err());
    assert!(stochastic_bound(1.0, 0.1, &[1.5, -0.5]).is_err());
}
