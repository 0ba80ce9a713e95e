mod common;

use common::checks::{adjoint_conjugation_worst, bch_error, bch_min_ratio, max_abs, random_tangent, round_trip_worst};
use common::*;
use lieloc_core::liegroup::{
    adjoint_alg, adjoint_rep, exp_map, hat, log_map, right_jacobian, right_jacobian_inv,
    right_jacobian_inv_series, v_matrix, v_matrix_inv,
};
use lieloc_core::{GroupElement, LieGroup, TangentVector};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use proptest::prelude::*;

#[test]
fn exp_matches_matrix_series() {
    let mut r = rng(1);
    for kappa in 0..=3 {
        for _ in 0..200 {
            let z = random_tangent(&mut r, kappa, 3.0, 2.0);
            let a = exp_map(&z).to_matrix();
            let b = taylor_expm(&hat(&z));
            assert!(max_abs(&(a - b)) < 1e-11);
        }
    }
}

#[test]
fn v_matrix_matches_series() {
    let mut r = rng(2);
    for _ in 0..200 {
        let z = random_tangent(&mut r, 0, 3.0, 0.0);
        let phi = z.phi();
        let k = lieloc_core::math::skew(&phi);
        // V = sum_k K^k / (k+1)!
        let mut v = Matrix3::zeros();
        let mut term = Matrix3::identity();
        for i in 0..40 {
            v += term;
            term = term * k / (i as f64 + 2.0);
        }
        assert!((v_matrix(&phi) - v).abs().max() < 1e-12);
        assert!((v_matrix(&phi) * v_matrix_inv(&phi) - Matrix3::identity()).abs().max() < 1e-10);
    }
}

#[test]
fn round_trip_ten_thousand_samples() {
    let worst = round_trip_worst(3, 10_000);
    assert!(worst < 1e-9, "worst round-trip error {worst:e}");
}

#[test]
fn adjoint_homomorphism_and_conjugation() {
    let mut r = rng(4);
    for kappa in 1..=3 {
        for _ in 0..200 {
            let x = random_element(&mut r, kappa, 3.0, 3.0);
            let y = random_element(&mut r, kappa, 3.0, 3.0);
            let lhs = adjoint_rep(&x.compose(&y));
            assert!(max_abs(&(lhs - adjoint_rep(&x) * adjoint_rep(&y))) < 1e-10);
            let z = random_tangent(&mut r, kappa, 3.0, 2.0);
            let ad_z = TangentVector::new(kappa, adjoint_rep(&x) * z.coords()).unwrap();
            let conj = x.to_matrix() * hat(&z) * x.inverse().to_matrix();
            assert!(max_abs(&(hat(&ad_z) - conj)) < 1e-10);
        }
    }
}

#[test]
fn commutator_identity() {
    let mut r = rng(5);
    for kappa in 0..=3 {
        for _ in 0..100 {
            let z = random_tangent(&mut r, kappa, 2.0, 2.0);
            let e = random_tangent(&mut r, kappa, 2.0, 2.0);
            let b = TangentVector::new(kappa, adjoint_alg(&z) * e.coords()).unwrap();
            let (hz, he) = (hat(&z), hat(&e));
            assert!(max_abs(&(hat(&b) - (&hz * &he - &he * &hz))) < 1e-12);
        }
    }
}

#[test]
fn right_jacobian_matches_finite_differences() {
    let mut r = rng(6);
    let h = 1e-6;
    for kappa in 1..=2 {
        for _ in 0..50 {
            let z = random_tangent(&mut r, kappa, 2.5, 1.0);
            let base = exp_map(&z).inverse();
            let d = z.dim();
            let mut num = DMatrix::zeros(d, d);
            for k in 0..d {
                let mut e = DVector::zeros(d);
                e[k] = h;
                let plus = log_map(&base.compose(&exp_map(&TangentVector::new(kappa, z.coords() + &e).unwrap())));
                let minus = log_map(&base.compose(&exp_map(&TangentVector::new(kappa, z.coords() - &e).unwrap())));
                num.set_column(k, &((plus.unwrap().coords() - minus.unwrap().coords()) / (2.0 * h)));
            }
            assert!(max_abs(&(right_jacobian(&z) - num)) < 1e-7);
        }
    }
}

#[test]
fn bernoulli_series_matches_direct_inverse() {
    let mut r = rng(7);
    for kappa in 1..=2 {
        for _ in 0..200 {
            let z = random_tangent(&mut r, kappa, 1.0, 0.5);
            let direct = right_jacobian(&z).try_inverse().unwrap();
            let series = right_jacobian_inv_series(&z, 10, 0.0);
            assert!(max_abs(&(series - &direct)) < 1e-8);
            assert!(max_abs(&(right_jacobian_inv(&z).unwrap() - direct)) < 1e-10);
        }
    }
}

#[test]
fn bch_remainder_is_second_order() {
    let ratio = bch_min_ratio(8, 100);
    assert!(ratio >= 3.5, "ratio {ratio}");
    let mut r = rng(8);
    for _ in 0..20 {
        let z = random_tangent(&mut r, 1, 2.0, 1.0);
        let dir = random_tangent(&mut r, 1, 1.0, 1.0);
        let tiny = dir.scale(1e-6 / dir.norm());
        assert!(bch_error(&z, &tiny) <= 10.0 * 1e-12);
    }
}

#[test]
fn adjoint_conjugation_identity() {
    let worst = adjoint_conjugation_worst(40, 200);
    assert!(worst < 1e-10, "conjugation gap {worst:e}");
}

#[test]
fn branches_agree_around_series_switch() {
    for &a in &[0.1, 0.4] {
        for &s in &[1.0 - 1e-9, 1.0 + 1e-9] {
            let z = TangentVector::from_parts(Vector3::new(a * s, 0.0, 0.0), &[Vector3::new(0.3, -0.2, 0.5)]);
            let lo = TangentVector::from_parts(Vector3::new(a * (2.0 - s), 0.0, 0.0), &[Vector3::new(0.3, -0.2, 0.5)]);
            assert!(max_abs(&(right_jacobian(&z) - right_jacobian(&lo))) < 1e-8);
            assert!(max_abs(&(exp_map(&z).to_matrix() - exp_map(&lo).to_matrix())) < 1e-8);
            assert!((v_matrix_inv(&z.phi()) - v_matrix_inv(&lo.phi())).abs().max() < 1e-8);
        }
    }
}

#[test]
fn group_trait_power_and_local() {
    let mut r = rng(9);
    let x = random_element(&mut r, 2, 2.0, 1.0);
    let half = x.power(0.5).unwrap();
    assert!(half.compose(&half).distance_to(&x) < 1e-12);
    let y = random_element(&mut r, 2, 2.0, 1.0);
    let d = x.local(&y).unwrap();
    assert!(x.retract(&d).distance_to(&y) < 1e-10);
    assert_eq!(GroupElement::identity(2).dof(), 9);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn prop_round_trip(v in proptest::collection::vec(-1.0f64..1.0, 9), ang in 1e-6f64..3.0) {
        let mut c = DVector::from_vec(v);
        let phi_norm = c.rows(0, 3).norm().max(1e-12);
        let phi = c.rows(0, 3) * (ang / phi_norm);
        c.rows_mut(0, 3).copy_from(&phi);
        let z = TangentVector::new(2, c).unwrap();
        let back = log_map(&exp_map(&z)).unwrap();
        prop_assert!((back.coords() - z.coords()).norm() < 1e-9);
    }

    #[test]
    fn prop_inverse_cancels(v in proptest::collection::vec(-2.0f64..2.0, 6)) {
        let x = GroupElement::exp(1, &DVector::from_vec(v));
        let e = x.compose(&x.inverse()).to_matrix() - DMatrix::identity(4, 4);
        prop_assert!(max_abs(&e) < 1e-12);
    }

    #[test]
    fn prop_jacobian_inverse(v in proptest::collection::vec(-0.9f64..0.9, 6)) {
        let z = TangentVector::new(1, DVector::from_vec(v)).unwrap();
        prop_assume!(z.angle() < 3.0);
        let p = right_jacobian(&z) * right_jacobian_inv(&z).unwrap();
        prop_assert!(max_abs(&(p - DMatrix::identity(6, 6))) < 1e-9);
    }
}
