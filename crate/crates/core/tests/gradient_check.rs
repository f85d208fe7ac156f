mod support;

use std::time::Instant;

use support::{all_gradient_cases, TOLERANCE};

#[test]
fn analytic_gradients_match_central_differences() {
    let start = Instant::now();
    for (name, err) in all_gradient_cases() {
        assert!(err < TOLERANCE, "{name}: relative error {err:.3e}");
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn relative_error_is_scale_free() {
    let a = [1.0, 2.0, 3.0];
    let b = [1.0, 2.0, 3.0 + 1e-6];
    let e = support::relative_error(&a, &b);
    let scaled = support::relative_error(&a.map(|x| x * 1e3), &b.map(|x| x * 1e3));
    assert!((e - scaled).abs() < 1e-12);
    assert_eq!(support::relative_error(&[0.0; 3], &[0.0; 3]), 0.0);
}

