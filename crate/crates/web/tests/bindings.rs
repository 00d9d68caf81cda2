use dblf_web::compute::{bound_curve, delayed_pendulum, recursive_drift};

#[test]
fn bound_curve_is_tight_on_the_scalar_system() {
    let rows = bound_curve(1.2, 0.01, 10, 0).unwrap();
    assert_eq!(rows.len(), 30);
    for r in rows.chunks(3) {
        assert!((r[1] - r[2]).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn constant_delay_lags_the_true_angle() {
    let rows = delayed_pendulum(5, false, 40, 3).unwrap();
    let rows: Vec<&[f64]> = rows.chunks(4).collect();
    assert_eq!(rows.len(), 40);
    for t in 5..40 {
        assert_eq!(rows[t][2].to_bits(), rows[t - 5][1].to_bits());
        assert_eq!(rows[t][3], 5.0);
    }
}

#[test]
fn unbiased_recursion_is_exact() {
    let rows = recursive_drift(16, 0.0, 1).unwrap();
    assert_eq!(rows.len(), 64);
    assert!(rows.chunks(4).all(|r| r[3] == 0.0));
    let biased = recursive_drift(16, 0.01, 1).unwrap();
    assert!(biased[63] > biased[3]);
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(bound_curve(1.2, 0.01, 0, 0).is_err());
    assert!(recursive_drift(0, 0.0, 0).is_err());
}
