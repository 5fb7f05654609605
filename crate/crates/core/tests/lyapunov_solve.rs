use deltacert::hybrid::IntegratorConfig;
use deltacert::linalg;
use deltacert::lyapunov::{
    lyap_value, lyapunov_residual, solve_discrete_lyapunov, symmetric_eig_bounds, LyapunovError,
    RobustLyapunovCertificate,
};
use deltacert::models::testing::LinearReturnModel;
use deltacert::poincare::poincare_extended;
use deltacert::sampling::{stream, Purpose};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

// Random matrix rescaled to a spectral radius drawn from [0.1, 0.95).
fn random_stable<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let rho = linalg::spectral_radius(&a).unwrap();
    let target = rng.random_range(0.1..0.95);
    a * (target / rho)
}

#[test]
fn scalar_case() {
    let a = DMatrix::from_element(1, 1, 0.8);
    let q = DMatrix::from_element(1, 1, 1.0);
    let p = solve_discrete_lyapunov(&a, &q).unwrap();
    assert!((p[(0, 0)] - 1.0 / 0.36).abs() < 1e-12);
    assert!(linalg::frobenius(&lyapunov_residual(&a, &p, &q)) <= 1e-10);
}

#[test]
fn random_four_by_four_systems() {
    let mut rng = stream(11, Purpose::Audit, 0, 0);
    for _ in 0..50 {
        let a = random_stable(4, &mut rng);
        let b = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let q = &b * b.transpose() + DMatrix::identity(4, 4);
        let p = solve_discrete_lyapunov(&a, &q).unwrap();
        let res = linalg::frobenius(&lyapunov_residual(&a, &p, &q));
        assert!(res <= 1e-10 * linalg::frobenius(&q), "residual {res:e}");
        assert_eq!(linalg::max_asymmetry(&p), 0.0);
        assert!(symmetric_eig_bounds(&p).unwrap().0 > 0.0);
    }
}

#[test]
fn unstable_matrix_rejected() {
    let a = DMatrix::from_row_slice(2, 2, &[1.1, 0.0, 0.0, 0.5]);
    assert!(matches!(
        solve_discrete_lyapunov(&a, &DMatrix::identity(2, 2)),
        Err(LyapunovError::NotStable(_))
    ));
}

#[test]
fn indefinite_matrix_has_no_bounds() {
    let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(matches!(symmetric_eig_bounds(&p), Err(LyapunovError::NotPositiveDefinite(_))));
}

#[test]
fn decrease_identity_on_linear_return_map() {
    let m = DMatrix::from_row_slice(2, 2, &[0.6, 0.3, -0.2, 0.4]);
    let sys = LinearReturnModel::new(m).unwrap();
    let origin = DVector::zeros(3);
    let cert =
        RobustLyapunovCertificate::from_jacobian(&sys.return_jacobian(), &origin, &[1.0; 3], None, 0.1).unwrap();
    let cfg = IntegratorConfig::default();
    let mut rng = stream(3, Purpose::Audit, 0, 0);
    for _ in 0..20 {
        let x = DVector::from_vec(vec![0.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let next = poincare_extended(&sys, &x, 0.0, &cfg).unwrap();
        let lhs = lyap_value(&cert, &next) - lyap_value(&cert, &x);
        let rhs = -x.dot(&(&cert.q * &x));
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}

#[test]
fn additive_form_round_trip() {
    let a = DMatrix::from_element(1, 1, 0.8);
    let cert = RobustLyapunovCertificate::from_jacobian(&a, &DVector::zeros(1), &[1.0], None, 0.1)
        .unwrap()
        .with_chi(7.0);
    let chi = RobustLyapunovCertificate::chi_from_additive(cert.k4(), cert.sigma(), cert.c);
    assert!((chi - 7.0).abs() < 1e-12);
}

#[test]
fn scaling_changes_only_coordinates() {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -1.962, 0.8]);
    let origin = DVector::from_vec(vec![0.0, -5.0]);
    let cert = RobustLyapunovCertificate::from_jacobian(&a, &origin, &[2.0, 0.5], None, 0.1).unwrap();
    let x = DVector::from_vec(vec![0.4, -4.5]);
    let dev = cert.deviation(&x);
    assert!((dev[0] - 0.2).abs() < 1e-15 && (dev[1] - 1.0).abs() < 1e-15);
    assert!((cert.from_deviation(&dev) - x).amax() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rayleigh_bounds(seed in 0u64..1000, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, x2 in -3.0f64..3.0) {
        let mut rng = stream(seed, Purpose::Audit, 1, 0);
        let a = random_stable(3, &mut rng);
        let cert = RobustLyapunovCertificate::from_jacobian(&a, &DVector::zeros(3), &[1.0; 3], None, 0.1).unwrap();
        let x = DVector::from_vec(vec![x0, x1, x2]);
        let v = lyap_value(&cert, &x);
        let r2 = x.norm_squared();
        prop_assert!(v >= cert.k1 * r2 * (1.0 - 1e-12) - 1e-14);
        prop_assert!(v <= cert.k2 * r2 * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn residual_small_for_random_stable(seed in 0u64..1000, n in 1usize..6) {
        let mut rng = stream(seed, Purpose::Audit, 2, 0);
        let a = random_stable(n, &mut rng);
        let q = DMatrix::identity(n, n);
        let p = solve_discrete_lyapunov(&a, &q).unwrap();
        prop_assert!(linalg::frobenius(&lyapunov_residual(&a, &p, &q)) <= 1e-10 * linalg::frobenius(&q));
    }
}
