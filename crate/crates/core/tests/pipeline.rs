use chazy_core::acceptance::{run_criterion, suite_scatter, FailureKind, Fault, VerifyOptions};
use chazy_core::kepler::kepler_scattering;
use chazy_core::scattering::{chazy_scattering, scattering_map_with};
use chazy_core::{KeplerOrbit, ToleranceSet};

#[test]
fn kepler_scattering_map_matches_closed_form() {
    let tol = ToleranceSet::default();
    for (m1, m2, h, e) in [(2.0, 2.0, 2.0, 2.0), (1.0, 3.0, 0.7, 1.6), (1.0, 2.0, 1.5, 3.0)] {
        let o = KeplerOrbit::new(m1, m2, h, e).unwrap();
        let sys = o.system();
        let exact = kepler_scattering(&o);
        let res = scattering_map_with(&o.past_params(), &tol, &sys, &suite_scatter()).unwrap();
        let ch = res.future.chazy.as_ref().unwrap();
        let rel = |x: &chazy_core::Configuration, y: &chazy_core::Configuration| sys.norm(&(x - y)) / sys.norm(y);
        assert!(rel(&ch.a, &exact.a_prime) < 1e-8, "A' for e = {e}");
        assert!(rel(&ch.c, &exact.c_prime) < 1e-6, "C' for e = {e}");
        assert!((res.future.params.rho1 - exact.rho1).abs() < 1e-7 * exact.rho1);
        assert!(res.energy_defect(&sys) < 1e-10);
    }
}

#[test]
fn chazy_entry_point_agrees_with_parameter_entry_point() {
    let o = KeplerOrbit::new(1.0, 1.0, 1.0, 1.2).unwrap();
    let sys = o.system();
    let tol = ToleranceSet::default();
    let exact = kepler_scattering(&o);
    let (a, c) = chazy_scattering(&exact.a, &exact.c, &tol, &sys, &suite_scatter()).unwrap();
    assert!(sys.norm(&(&a - &exact.a_prime)) < 1e-8 * sys.norm(&exact.a_prime));
    assert!(sys.norm(&(&c - &exact.c_prime)) < 1e-6 * sys.norm(&exact.c_prime));
}

#[test]
fn wrong_b_sign_is_detected() {
    let opts = VerifyOptions { fault: Some(Fault::WrongBSign), ..VerifyOptions::default() };
    let out = run_criterion(4, &opts);
    assert!(!out.passed);
    assert_eq!(out.failure, Some(FailureKind::Logic));
}
