use hsvp::boundary::*;
use hsvp::physcore::{Label, Species, World};
use proptest::prelude::*;

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

// K_nu(z) = int_0^inf e^{-z cosh t} cosh(nu t) dt, truncated where the
// integrand is below e^{-60} of its peak
fn k_oracle(nu: f64, z: f64) -> f64 {
    let mut top = 1.0;
    while z * (f64::cosh(top) - 1.0) - nu * top < 60.0 {
        top += 0.25;
    }
    simpson(|t| (-z * (t.cosh() - 1.0)).exp() * (nu * t).cosh(), 0.0, top, 40_000) * (-z).exp()
}

#[test]
fn bessel_functions_match_the_integral_oracle() {
    for z in [0.5, 1.0, 5.0, 20.0] {
        for (nu, got) in [(0.0, bessel_k0(z)), (1.0, bessel_k1(z)), (2.0, bessel_k2(z))] {
            let want = k_oracle(nu, z);
            let got = got.unwrap();
            assert!((got - want).abs() <= 1e-10 * want, "K_{nu}({z}): {got:e} vs {want:e}");
        }
    }
}

#[test]
fn bessel_recurrence_holds() {
    for z in [0.5, 1.0, 5.0, 20.0] {
        let (k0, k1, k2) = (bessel_k0(z).unwrap(), bessel_k1(z).unwrap(), bessel_k2(z).unwrap());
        let rhs = k0 + 2.0 * k1 / z;
        assert!((k2 - rhs).abs() <= 1e-8 * k2, "z = {z}");
    }
}

#[test]
fn scaled_bessel_survives_large_arguments() {
    let z = 800.0;
    let s = bessel_k2_scaled(z).unwrap();
    // leading asymptotics sqrt(pi/(2z)) (1 + 15/(8z))
    let approx = (std::f64::consts::PI / (2.0 * z)).sqrt() * (1.0 + 15.0 / (8.0 * z));
    assert!((s - approx).abs() < 1e-5 * approx);
    assert!(bessel_k0(0.0).is_err() && bessel_k1(-1.0).is_err());
}

#[test]
fn juttner_is_normalized() {
    for (mass, charge) in [(1.0, 1.0), (2.0, -1.0), (0.5, 3.0)] {
        let sp = Species::new(Label::Plus, mass, charge).unwrap();
        let w = World::default();
        for t in [0.5, 1.0, 2.0] {
            let top = 60.0 * t + 10.0 * mass;
            let mass_total = 4.0 * std::f64::consts::PI * simpson(|p| p * p * juttner(&sp, &w, t, &[0.0, 0.0, p]).unwrap(), 0.0, top, 60_000);
            assert!((sp.charge_magnitude() * mass_total - 1.0).abs() <= 1e-8, "m {mass} q {charge} T {t}: {mass_total}");
        }
    }
}

#[test]
fn isothermal_profile_and_inflow_rule() {
    let sp = Species::new(Label::Minus, 2.0, -0.5).unwrap();
    let w = World::default();
    let spec = BoundarySpec::new(BoundaryKind::IsothermalSimple);
    let p = [0.3, -0.4, 1.0];
    let p0 = (4.0f64 + 0.09 + 0.16 + 1.0).sqrt();
    let want = (-0.5 * p0).exp() / (0.5 * 4.0);
    assert!((spec.profile(&sp, &w, &[0.0, 0.0], &p) - want).abs() < 1e-15);
    assert!((inflow_value(&spec, &sp, &w, &[1.0, 2.0], &p).unwrap() - want).abs() < 1e-15);
    assert!(inflow_value(&spec, &sp, &w, &[1.0, 2.0], &[0.3, -0.4, -1.0]).is_err());
}

#[test]
fn compact_support_vanishes_beyond_the_radius() {
    let sp = Species::new(Label::Plus, 1.0, 1.0).unwrap();
    let w = World::default();
    let spec = BoundarySpec::new(BoundaryKind::Exponential { amplitude: 0.1, rate: 1.0 }).with_support(2.0);
    assert_eq!(spec.profile(&sp, &w, &[0.0, 0.0], &[0.0, 0.0, 2.0]), 0.0);
    assert_eq!(spec.profile(&sp, &w, &[0.0, 0.0], &[1.5, 0.0, 1.5]), 0.0);
    assert!(spec.profile(&sp, &w, &[0.0, 0.0], &[0.0, 0.0, 1.0]) > 0.0);
}

#[test]
fn temperature_certificate_accepts_the_decaying_profile() {
    let t = TemperatureProfile::Algebraic { base: 1.0, amplitude: 1.0, offset: 20.0, power: 4.0 };
    let xs: Vec<[f64; 2]> = (0..50).map(|i| [i as f64, 0.5 * i as f64]).collect();
    assert!((t.value(&[0.0, 0.0]) - (1.0 + 20f64.powi(-4))).abs() < 1e-16);
    t.check(&xs, false).unwrap();
}

#[test]
fn weighted_sup_of_exponential_data() {
    // sup_p e^{beta p0} a e^{-rate p0} = a e^{(beta - rate) m c} when rate >= beta
    let sp = Species::new(Label::Plus, 2.0, 1.0).unwrap();
    let w = World { beta: 0.5, ..World::default() };
    let spec = BoundarySpec::new(BoundaryKind::Exponential { amplitude: 0.3, rate: 1.5 });
    let got = spec.weighted_sup(&sp, &w, 0.5);
    assert!((got - 0.3 * (-2.0f64).exp()).abs() < 1e-12 * got);
    let grows = BoundarySpec::new(BoundaryKind::Exponential { amplitude: 0.3, rate: 0.2 });
    assert!(grows.weighted_sup(&sp, &w, 0.5).is_infinite());
}

proptest! {
    #[test]
    fn bessel_values_decrease_and_order_in_nu(z in 0.05f64..50.0) {
        let (k0, k1, k2) = (bessel_k0(z).unwrap(), bessel_k1(z).unwrap(), bessel_k2(z).unwrap());
        prop_assert!(k0 > 0.0 && k0 < k1 && k1 < k2);
        prop_assert!(bessel_k1(z * 1.1).unwrap() < k1);
        let rhs = k0 + 2.0 * k1 / z;
        prop_assert!((k2 - rhs).abs() <= 1e-8 * k2);
    }

    #[test]
    fn juttner_depends_only_on_energy(p in prop::array::uniform3(-5.0f64..5.0), t in 0.2f64..4.0) {
        let sp = Species::new(Label::Plus, 1.0, 1.0).unwrap();
        let w = World::default();
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let a = juttner(&sp, &w, t, &p).unwrap();
        let b = juttner(&sp, &w, t, &[0.0, 0.0, r]).unwrap();
        prop_assert!((a - b).abs() <= 1e-14 * a.max(1e-300));
        prop_assert!((log_juttner(&sp, &w, t, &p).unwrap() - a.ln()).abs() < 1e-10);
    }
}
