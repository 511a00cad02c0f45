mod common;

use common::*;

const TOL: f64 = 1e-3;

#[test]
fn matmul_backward_matches_finite_differences() {
    let e = gradcheck_matmul();
    assert!(e < TOL, "{e}");
}

#[test]
fn dense_backward_matches_finite_differences() {
    let e = gradcheck_dense();
    assert!(e < TOL, "{e}");
}

#[test]
fn conv_backward_matches_finite_differences() {
    let e = gradcheck_conv();
    assert!(e < TOL, "{e}");
}

#[test]
fn batchnorm_backward_matches_finite_differences() {
    let e = gradcheck_batchnorm();
    assert!(e < TOL, "{e}");
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    let e = gradcheck_softmax_ce();
    assert!(e < TOL, "{e}");
}

#[test]
fn avgpool_backward_matches_finite_differences() {
    let e = gradcheck_avgpool();
    assert!(e < TOL, "{e}");
}

#[test]
fn unquantized_pact_matches_finite_differences() {
    let e = gradcheck_pact();
    assert!(e < TOL, "{e}");
}

#[test]
fn pact_straight_through_branches() {
    pact_branch_enumeration().unwrap();
}
