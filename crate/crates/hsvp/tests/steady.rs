use hsvp::boundary::{BoundaryKind, BoundarySpec};
use hsvp::physcore::{Label, Species, SpeciesPair, World};
use hsvp::report::Status;
use hsvp::steady::*;
use hsvp::Error;

fn isothermal() -> SteadyConfig {
    let w = World { beta: 0.5, beta_tilde: 0.5, ..World::default() };
    let spec = BoundarySpec::new(BoundaryKind::IsothermalSimple);
    let mut cfg = SteadyConfig::new(SpeciesPair::symmetric(1.0), w, spec.clone(), spec);
    cfg.force = true;
    cfg
}

fn asymmetric(epsilon: f64) -> SteadyConfig {
    let w = World { c: 1.0, g: 20.0, b3: 0.5, beta: 1.0, beta_tilde: 1.0, epsilon, p_max: None };
    let species = SpeciesPair::new(Species::new(Label::Plus, 1.0, 1.0).unwrap(), Species::new(Label::Minus, 2.0, -1.0).unwrap()).unwrap();
    SteadyConfig::new(
        species,
        w,
        BoundarySpec::new(BoundaryKind::Exponential { amplitude: 0.05, rate: 1.0 }),
        BoundarySpec::new(BoundaryKind::Exponential { amplitude: 0.03, rate: 1.2 }),
    )
}

// composite Simpson on [0, top] with n (even) intervals
fn simpson(f: impl Fn(f64) -> f64, top: f64, n: usize) -> f64 {
    let h = top / n as f64;
    let mut s = f(0.0) + f(top);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn isothermal_data_give_zero_field() {
    let cfg = isothermal();
    let sol = fixed_point_solve(&cfg).unwrap();
    assert!(sol.converged);
    assert!(sol.iterations() <= 2, "{:?}", sol.history);
    assert!(sol.potential.sup() <= 1e-10);
    assert!(sol.density.sup() <= 1e-8);
}

#[test]
fn species_density_matches_radial_integral() {
    // one species alone: n(x3) = e^{-g x3/2} 4 pi int p^2 e^{-sqrt(1+p^2)/2} dp
    let cfg = isothermal();
    let ctx = DensityContext::new(&cfg);
    let zero = hsvp::poisson::SlabPotential::zero();
    let moment = 4.0 * std::f64::consts::PI * simpson(|p| p * p * (-0.5 * (1.0 + p * p).sqrt()).exp(), 120.0, 24000);
    for x3 in [0.0, 0.5, 2.0] {
        let got = species_density(&cfg, &ctx, 0, &zero, x3).unwrap();
        let want = (-0.5 * x3).exp() * moment;
        assert!((got - want).abs() <= 1e-7 * want, "x3 {x3}: {got} vs {want}");
        let minus = species_density(&cfg, &ctx, 1, &zero, x3).unwrap();
        assert!((got + minus).abs() <= 1e-12 * want);
    }
}

#[test]
fn asymmetric_data_contract_and_meet_bounds() {
    let cfg = asymmetric(0.0);
    for g in smallness_gates(&cfg).unwrap().iter().filter(|c| c.status != Status::Advisory) {
        assert_eq!(g.status, Status::Pass, "{}", g.name);
    }
    let sol = fixed_point_solve(&cfg).unwrap();
    assert!(sol.converged);
    assert!(sol.potential.sup() > 1e-6, "field should be nontrivial");
    for r in sol.ratios().iter().skip(1) {
        assert!(*r < 1.0, "{:?}", sol.ratios());
    }
    let probes = cfg.probe_cloud().unwrap();
    for c in theorem_bounds_report(&sol, &probes).unwrap() {
        assert_ne!(c.status, Status::Fail, "{}: {} vs {}", c.name, c.measured, c.tolerance);
    }
}

#[test]
fn energy_shortcut_agrees_with_traced_value() {
    let cfg = asymmetric(0.0);
    let sol = fixed_point_solve(&cfg).unwrap();
    for (k, (sp, spec)) in cfg.species_list().into_iter().enumerate() {
        let opts = EvalOptions::new(spec, sp, &cfg.world, 1e-12);
        for (x3, r, p3) in [(0.3, 0.5, 1.0), (1.0, 2.0, -0.5), (0.05, 0.1, -2.0), (2.0, 0.0, 0.3)] {
            let fast = slab_h(spec, sp, &cfg.world, sol.potential.value(x3), x3, r, p3, &opts).unwrap();
            let traced = eval_h(&sol.field, sp, &cfg.world, spec, &[0.0, 0.0, x3], &[r, 0.0, p3], &opts).unwrap();
            assert!((fast - traced).abs() <= 1e-8 * fast.abs().max(1e-300), "species {k} at {x3},{r},{p3}: {fast} vs {traced}");
        }
    }
}

#[test]
fn reflecting_wall_keeps_contraction() {
    let supported = |eps: f64| {
        let mut cfg = asymmetric(eps);
        cfg.boundary = cfg.boundary.clone().map(|b| b.with_support(1.5));
        cfg
    };
    let cfg = supported(0.02);
    let sol = fixed_point_solve(&cfg).unwrap();
    assert!(sol.converged);
    let probes = cfg.probe_cloud().unwrap();
    for c in theorem_bounds_report(&sol, &probes).unwrap() {
        assert_ne!(c.status, Status::Fail, "{}", c.name);
    }
    // reflection adds particles: the field exceeds the inflow one
    let inflow = fixed_point_solve(&supported(0.0)).unwrap();
    assert!(sol.density.sup() > inflow.density.sup());
}

#[test]
fn failing_gate_stops_the_solver() {
    let mut cfg = asymmetric(0.0);
    cfg.boundary[0] = BoundarySpec::new(BoundaryKind::Exponential { amplitude: 50.0, rate: 1.0 });
    match fixed_point_solve(&cfg) {
        Err(Error::Gate(msg)) => assert!(!msg.is_empty()),
        other => panic!("expected a gate error, got {:?}", other.map(|s| s.iterations())),
    }
}

#[test]
fn pointwise_geometry_is_refused_by_slab_solver() {
    let mut cfg = isothermal();
    cfg.geometry = Geometry::Pointwise3D;
    assert!(fixed_point_solve(&cfg).is_err());
}
