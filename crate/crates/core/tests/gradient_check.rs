//! BPTT gradients against central finite differences computed in f64.

mod common;

use common::{bptt_error_f32, bptt_error_f64, grad_cases};

#[test]
fn f64_gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for case in grad_cases() {
        let err = bptt_error_f64(&case);
        worst = worst.max(err);
        assert!(err <= 1e-6, "{:?}: rel err {err:e}", case.arch);
    }
    println!("f64 worst relative error {worst:e}");
}

#[test]
fn f32_gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for case in grad_cases() {
        let err = bptt_error_f32(&case);
        worst = worst.max(err);
        assert!(err <= 1e-3, "{:?}: rel err {err:e}", case.arch);
    }
    println!("f32 worst relative error {worst:e}");
}
