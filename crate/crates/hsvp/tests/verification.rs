use hsvp::boundary::{BoundaryKind, BoundarySpec};
use hsvp::field::FieldSnapshot;
use hsvp::physcore::{Label, Species, SpeciesPair, World};
use hsvp::report::Status;
use hsvp::steady::{fixed_point_solve, SteadyConfig};
use hsvp::verification::*;

fn isothermal() -> SteadyConfig {
    let w = World { beta: 0.5, beta_tilde: 0.5, ..World::default() };
    let spec = BoundarySpec::new(BoundaryKind::IsothermalSimple);
    let mut cfg = SteadyConfig::new(SpeciesPair::symmetric(1.0), w, spec.clone(), spec);
    cfg.force = true;
    cfg
}

fn heavy_light(epsilon: f64, support: Option<f64>) -> SteadyConfig {
    let w = World { c: 1.0, g: 10.0, b3: 0.5, beta: 1.0, beta_tilde: 1.0, epsilon, p_max: support };
    let species = SpeciesPair::new(Species::new(Label::Plus, 1.0, 1.0).unwrap(), Species::new(Label::Minus, 2.0, -1.0).unwrap()).unwrap();
    let data = |a: f64, r: f64| match support {
        Some(p) => compact_exponential(a, r, p),
        None => BoundarySpec::new(BoundaryKind::Exponential { amplitude: a, rate: r }),
    };
    SteadyConfig::new(species, w, data(0.05, 1.0), data(0.03, 1.2))
}

#[test]
fn isothermal_closed_form_is_invariant_along_free_fall() {
    // the closed form depends on p0 + m g x3 / c only
    let sp = Species::new(Label::Plus, 1.0, 1.0).unwrap();
    let w = World::default();
    let a = isothermal_closed_form(&sp, &w, 1.0, &[0.0; 3]);
    let b = isothermal_closed_form(&sp, &w, 0.0, &[0.0, 0.0, 3f64.sqrt()]);
    assert!((a - b).abs() < 1e-15);
    assert!((a - (-1f64).exp()).abs() < 1e-15);
}

#[test]
fn oracle_suite_passes() {
    let out = run_oracle_suite(&isothermal()).unwrap();
    assert!(out.report.passed(), "{}", out.report.to_json());
    assert!(out.report.check("weighted probe error").unwrap().measured <= 1e-6);
}

#[test]
fn characteristics_suite_passes_in_a_steady_field() {
    let sol = fixed_point_solve(&heavy_light(0.0, None)).unwrap();
    let sp = sol.config.species.plus;
    let mut cfg = CharacteristicsConfig::new(sp, sol.config.world, sol.field.clone(), [-1.0, -1.0, 0.05, -3.0, -3.0, -3.0], [1.0, 1.0, 3.0, 3.0, 3.0, 3.0]);
    cfg.derivative_samples = 64;
    let rep = run_characteristics_suite(&cfg, 256, 5).unwrap();
    assert!(rep.passed(), "{}", rep.to_json());
    for name in ["exit bound violations", "energy drift", "horizontal momentum drift", "kinetic distance envelope", "sensitivity identity residual"] {
        assert_eq!(rep.check(name).map(|c| c.status), Some(Status::Pass), "{name}");
    }
}

#[test]
fn characteristics_suite_refuses_inadmissible_fields() {
    let sp = Species::new(Label::Plus, 1.0, 1.0).unwrap();
    let x = hsvp::poisson::grid::uniform(100, 10.0);
    let rho = hsvp::poisson::SlabProfile::from_fn(x, |t| 50.0 * (-t).exp(), Some(hsvp::poisson::DecayCertificate { amplitude: 50.0, rate: 1.0 })).unwrap();
    let strong = FieldSnapshot::slab(std::sync::Arc::new(hsvp::poisson::solve_slab(&rho).unwrap()));
    let cfg = CharacteristicsConfig::new(sp, World::default(), strong, [0.0; 6], [1.0; 6]);
    assert!(run_characteristics_suite(&cfg, 8, 0).is_err());
}

#[test]
fn specular_suite_passes_with_supported_data() {
    let rep = run_specular_suite(&heavy_light(0.02, Some(1.5))).unwrap();
    assert!(rep.passed(), "{}", rep.to_json());
    assert_eq!(rep.check("epsilon zero reproduces inflow").unwrap().measured, 0.0);
    assert_eq!(rep.check("specular epsilon gate").unwrap().status, Status::Pass);
}

#[test]
fn report_json_is_stable() {
    let out = run_oracle_suite(&isothermal()).unwrap();
    let a = out.report.to_json();
    let b = run_oracle_suite(&isothermal()).unwrap().report.to_json();
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["suite"], "oracle");
}

#[test]
fn loglog_slope_of_a_power_law() {
    let pts: Vec<(f64, f64)> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|&x| (x, 3.0 * x.powf(-2.5))).collect();
    assert!((loglog_slope(&pts).unwrap() + 2.5).abs() < 1e-12);
    assert!(loglog_slope(&pts[..1]).is_none());
}
