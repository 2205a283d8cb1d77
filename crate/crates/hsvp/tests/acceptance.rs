//! Acceptance run: one PASS/FAIL line per criterion, written straight to
//! stdout so the lines show up without `--nocapture`. A failing criterion is
//! reported, never panicked on.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hsvp::boundary::{bessel_k0, bessel_k1, bessel_k2, juttner, BoundaryKind, BoundarySpec};
use hsvp::characteristics::backward_exit;
use hsvp::dynamics::*;
use hsvp::field::FieldSnapshot;
use hsvp::physcore::*;
use hsvp::poisson::*;
use hsvp::quad::Rule;
use hsvp::report::Status;
use hsvp::steady::{fixed_point_solve, SteadyConfig, SteadySolution};
use hsvp::verification::*;

type Outcome = Result<String, String>;

fn heavy_light_world(epsilon: f64, p_max: Option<f64>) -> World {
    World { c: 1.0, g: 10.0, b3: 0.5, beta: 1.0, beta_tilde: 1.0, epsilon, p_max }
}

fn heavy_light(epsilon: f64, support: Option<f64>) -> SteadyConfig {
    let species = SpeciesPair::new(Species::new(Label::Plus, 1.0, 1.0).unwrap(), Species::new(Label::Minus, 2.0, -1.0).unwrap()).unwrap();
    let data = |a: f64, r: f64| match support {
        Some(p) => compact_exponential(a, r, p),
        None => BoundarySpec::new(BoundaryKind::Exponential { amplitude: a, rate: r }),
    };
    SteadyConfig::new(species, heavy_light_world(epsilon, support), data(0.05, 1.0), data(0.03, 1.2))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn isothermal_oracle() -> Outcome {
    let w = World { beta: 0.5, beta_tilde: 0.5, ..World::default() };
    let spec = BoundarySpec::new(BoundaryKind::IsothermalSimple);
    let mut cfg = SteadyConfig::new(SpeciesPair::symmetric(1.0), w, spec.clone(), spec);
    cfg.force = true;
    let t = Instant::now();
    let out = run_oracle_suite(&cfg).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let m = |n: &str| out.report.check(n).map_or(f64::NAN, |c| c.measured);
    let detail = format!(
        "iterations {}, |phi| {:.1e}, |rho| {:.1e}, weighted error {:.1e} over {} probes, {el:.1?}",
        m("iterations"),
        m("potential sup"),
        m("density sup"),
        m("weighted probe error"),
        cfg.probe_cloud().map_or(0, |p| p.len())
    );
    check(out.report.passed() && el <= Duration::from_secs(60), detail)
}

fn ballistic_exit() -> Outcome {
    let sp = Species::new(Label::Plus, 1.0, 1.0).unwrap();
    let w = World::default();
    let t = Instant::now();
    let rec = backward_exit(&FieldSnapshot::zero(), &sp, &w, &[0.0, 0.0, 1.0], &[0.0; 3], 1e-12, None).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let s3 = 3f64.sqrt();
    let dt = (rec.t_exit - s3).abs();
    let dp = (rec.p_exit[0].abs()).max(rec.p_exit[1].abs()).max((rec.p_exit[2] - s3).abs());
    check(dt <= 1e-6 && dp <= 1e-6 && el < Duration::from_millis(100), format!("|t_b - sqrt3| {dt:.1e}, |p_b - (0,0,sqrt3)| {dp:.1e}, {el:.1?}"))
}

fn characteristics_run(steady: &SteadySolution) -> Result<SuiteReport, String> {
    let sp = steady.config.species.plus;
    let mut cfg = CharacteristicsConfig::new(sp, steady.config.world, steady.field.clone(), [-1.0, -1.0, 0.05, -3.0, -3.0, -3.0], [1.0, 1.0, 3.0, 3.0, 3.0, 3.0]);
    cfg.tol = 1e-10;
    cfg.derivative_samples = 1000;
    run_characteristics_suite(&cfg, 10_000, 2024).map_err(|e| e.to_string())
}

fn conservation(rep: &SuiteReport) -> Outcome {
    let e = rep.check("energy drift").ok_or("energy drift missing")?;
    let h = rep.check("horizontal momentum drift").ok_or("momentum drift missing")?;
    check(
        e.status == Status::Pass && h.status == Status::Pass,
        format!("10000 traces at tol 1e-10: energy drift {:.1e}, |p_par| drift {:.1e}", e.measured, h.measured),
    )
}

fn exit_bounds(rep: &SuiteReport) -> Outcome {
    let v = rep.check("exit bound violations").ok_or("violations missing")?;
    let worst = rep.checks.iter().filter(|c| c.name.starts_with("worst ratio")).fold(0.0f64, |m, c| m.max(c.measured));
    check(v.measured == 0.0, format!("{} violations over 10000 Sobol samples, worst bound ratio {worst:.3}", v.measured))
}

fn sensitivities(rep: &SuiteReport) -> Outcome {
    let r = rep.check("sensitivity identity residual").ok_or("sensitivity check missing")?;
    let x = rep.check("sensitivity samples excluded").map_or(f64::NAN, |c| c.measured);
    check(r.status == Status::Pass, format!("worst residual {:.1e} over 1000 samples ({x} grazing excluded)", r.measured))
}

fn poisson_solver() -> Outcome {
    let closed = |t: f64| 1.0 - (-t).exp();
    let exp_rho = |n: usize| SlabProfile::from_fn(grid::uniform(n, 20.0), |t| (-t).exp(), Some(DecayCertificate { amplitude: 1.0, rate: 1.0 })).unwrap();
    let fine = solve_slab(&exp_rho(801)).map_err(|e| e.to_string())?;
    let err = (0..=2000).map(|i| i as f64 * 0.01).map(|t| (fine.value(t) - closed(t)).abs()).fold(0.0, f64::max);

    // second-difference residual of the exact potential on refined grids
    let rho_fn = |t: f64| (-t).exp() * (1.0 + (2.0 * t).sin());
    let mut res = Vec::new();
    for n in [51, 101, 201, 401] {
        let x = grid::uniform(n, 10.0);
        let rho = SlabProfile::from_fn(x, rho_fn, Some(DecayCertificate { amplitude: 3.0, rate: 1.0 })).unwrap();
        let tail = |t: f64| hsvp::quad::adaptive(rho_fn, t, 60.0, 1e-13, 1e-15).unwrap();
        let exact: Vec<f64> = rho.x.iter().map(|&t| hsvp::quad::adaptive(|y| y * rho_fn(y), 0.0, t, 1e-13, 1e-15).unwrap() + t * tail(t)).collect();
        let d: Vec<f64> = rho.x.iter().map(|&t| tail(t)).collect();
        let phi = SlabPotential::from_nodes(rho.x.clone(), exact, d, Some(1.0)).map_err(|e| e.to_string())?;
        res.push(second_difference_residual(&rho, &phi));
    }
    let orders: Vec<f64> = res.windows(2).map(|w| (w[0] / w[1]).log2()).collect();

    let mut grad_err = 0.0f64;
    for (a, b) in [(1.0, 1.0), (2.5, 0.5), (0.3, 4.0)] {
        let rho = SlabProfile::from_fn(grid::uniform(801, 40.0 / b), |t| a * (-b * t).exp(), Some(DecayCertificate { amplitude: a, rate: b })).unwrap();
        let rep = gradient_bound_check_slab(&rho, &solve_slab(&rho).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        grad_err = grad_err.max((rep.measured - a / b).abs() / (a / b));
    }

    // wide disk with height profile e^{-x3}, probed on the axis
    let mut rb = vec![0.0, 0.25, 0.5, 1.0];
    while *rb.last().unwrap() < 2e4 {
        let v = rb.last().unwrap() * 2.0;
        rb.push(v);
    }
    let zb = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 9.0, 14.0, 20.0, 30.0, 45.0];
    let rho3 = Sampled3D::cylindrical(&Rule::composite(&rb, 10), 1, &Rule::composite(&zb, 10), |y| (-y[2]).exp());
    let heights = [0.5, 1.0, 2.0];
    let q: Vec<[f64; 3]> = heights.iter().map(|&h| [0.0, 0.0, h]).collect();
    let vals = solve_halfspace(&rho3, &q).map_err(|e| e.to_string())?;
    let rel3 = heights.iter().zip(&vals).map(|(h, v)| (v.phi - closed(*h)).abs() / closed(*h)).fold(0.0, f64::max);

    let ok = err <= 1e-6 && orders.iter().all(|o| (1.8..=2.2).contains(o)) && grad_err <= 1e-6 && rel3 <= 1e-3;
    check(ok, format!("closed-form error {err:.1e}, residual orders {orders:.3?}, |phi'| vs A/B rel {grad_err:.1e}, 3D vs slab rel {rel3:.1e}"))
}

fn bessel_and_juttner() -> Outcome {
    let mut worst_rec = 0.0f64;
    for z in [0.5, 1.0, 5.0, 20.0] {
        let (k0, k1, k2) = (bessel_k0(z), bessel_k1(z), bessel_k2(z));
        let (k0, k1, k2) = (k0.map_err(|e| e.to_string())?, k1.map_err(|e| e.to_string())?, k2.map_err(|e| e.to_string())?);
        worst_rec = worst_rec.max((k2 - k0 - 2.0 * k1 / z).abs() / k2);
    }
    let mut worst_norm = 0.0f64;
    for (mass, charge) in [(1.0, 1.0), (2.0, -1.0), (0.5, 3.0)] {
        let sp = Species::new(Label::Plus, mass, charge).unwrap();
        let w = World::default();
        for t in [0.5, 1.0, 2.0] {
            let top = 60.0 * t + 10.0 * mass;
            let total = 4.0 * std::f64::consts::PI * simpson(|p| p * p * juttner(&sp, &w, t, &[0.0, 0.0, p]).unwrap(), 0.0, top, 60_000);
            worst_norm = worst_norm.max((sp.charge_magnitude() * total - 1.0).abs());
        }
    }
    check(worst_rec <= 1e-8 && worst_norm <= 1e-8, format!("recurrence rel {worst_rec:.1e}, |q| int juttner - 1 = {worst_norm:.1e}"))
}

fn steady_contraction(sol: &SteadySolution, elapsed: Duration) -> Outcome {
    let ratios: Vec<f64> = sol.history.iter().skip(1).filter_map(|r| r.ratio).collect();
    let worst = ratios.iter().fold(0.0f64, |m, r| m.max(*r));
    let admissible = sol.history.iter().all(|r| r.admissible);
    let gates = sol.gates.iter().all(|c| c.status != Status::Fail);
    check(
        gates && admissible && worst <= 0.75 && elapsed <= Duration::from_secs(300),
        format!("{} iterations, worst ratio {worst:.3}, all iterates admissible: {admissible}, gates pass: {gates}, {elapsed:.1?}", sol.history.len()),
    )
}

fn dynamic_decay(sol: &SteadySolution) -> Outcome {
    let bg = Background::from_steady(sol);
    let lambda = derived_constants(&bg.world, &bg.species).lambda;
    let t_end = 10.0 / lambda;

    let small = PhaseGrid::new(2.0, 12, 6.0, 8, &PhaseGrid::graded_breaks(1.0, 6.0, 2), 4).map_err(|e| e.to_string())?;
    let dx = small.x3[1] - small.x3[0];
    let zero = evolve(&bg, &InitialData::zero(), &EvolveConfig::new(small, 0.5 * dx, 1000.0 * 0.5 * dx)).map_err(|e| e.to_string())?;
    let zero_sup = zero.ledger.iter().fold(0.0f64, |m, e| m.max(e.norm));

    let t = Instant::now();
    let grid = decay_grid(&bg, t_end, 64, 32, 64).map_err(|e| e.to_string())?;
    let dt = (grid.x3[1] - grid.x3[0]) / bg.world.c;
    let mut cfg = EvolveConfig::new(grid, dt, t_end);
    cfg.tol = 1e-8;
    let init = wall_vanishing_data(bg.world, 0.01, 4.0);
    // reported only: the gradient gate is far below any resolvable data
    let gates: Vec<String> = dynamic_gates(&bg, &cfg.grid, &init)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|c| format!("{} {:.2e}/{:.2e} {:?}", c.name, c.measured, c.tolerance, c.status))
        .collect();
    let ev = evolve(&bg, &init, &cfg).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let ledger: Vec<(f64, f64)> = ev.ledger.iter().map(|e| (e.t, e.norm)).collect();
    let fit = decay_fit(&ledger, lambda).map_err(|e| e.to_string())?;
    check(
        fit.envelope_pass && fit.rate_pass && zero_sup <= 1e-8 && el <= Duration::from_secs(600),
        format!(
            "T = {t_end:.1}, envelope {:.3} (limit 3), tail rate {:.3} vs lambda {lambda:.4}, zero data sup {zero_sup:.1e} over 1000 steps, 64x32x64 in {el:.1?}; gates: {}",
            fit.envelope_ratio,
            fit.rate,
            gates.join(", ")
        ),
    )
}

fn continuity() -> Outcome {
    // free streaming of a Gaussian bump; continuity must close to grid order
    let w = World { c: 1.0, g: 1.0, ..World::default() };
    let bg = Background::new(SpeciesPair::symmetric(1.0), w, [BoundarySpec::new(BoundaryKind::Zero), BoundarySpec::new(BoundaryKind::Zero)], Arc::new(SlabPotential::zero()));
    let init = InitialData {
        f0: Arc::new(|sp: &Species, x3, r, p3| {
            if sp.charge < 0.0 {
                return 0.0;
            }
            let p0 = (1.0 + r * r + p3 * p3).sqrt();
            (-((x3 - 3.0) / 0.5f64).powi(2)).exp() * (-p0).exp()
        }),
        weighted_bound: None,
    };
    let mut levels = Vec::new();
    for lvl in 0..3 {
        let k = 1usize << lvl;
        let breaks = PhaseGrid::graded_breaks(12.0 / (2 * k) as f64, 12.0, 2 * k);
        let grid = PhaseGrid::new(6.0, 24 * k + 1, 12.0, 8 * k, &breaks, 4).map_err(|e| e.to_string())?;
        let mut cfg = EvolveConfig::new(grid, 0.1 / k as f64, 1.0);
        cfg.self_consistent = false;
        cfg.clip = false;
        cfg.tol = 1e-11;
        let ev = evolve(&bg, &init, &cfg).map_err(|e| e.to_string())?;
        let res = continuity_residual(&ev.x3, &ev.moments).map_err(|e| e.to_string())?;
        levels.push(res.iter().fold(0.0f64, |m, r| m.max(r.1)));
    }
    let ratios: Vec<f64> = levels.windows(2).map(|w| w[0] / w[1]).collect();
    check(ratios.iter().all(|r| *r >= 1.7), format!("residuals {:?}, ratios {ratios:.2?}", levels.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()))
}

fn specular() -> Outcome {
    let rep = run_specular_suite(&heavy_light(0.02, Some(1.5))).map_err(|e| e.to_string())?;
    let summary: Vec<String> = rep.checks.iter().map(|c| format!("{} {:.1e}", c.name, c.measured)).collect();
    let zero = rep.check("epsilon zero reproduces inflow").map_or(f64::NAN, |c| c.measured);
    check(rep.passed() && zero == 0.0, summary.join("; "))
}

fn asymptotic() -> Outcome {
    let cfg = AsymptoticConfig::standard(0.001, 0.19, vec![5.0, 10.0, 20.0, 40.0]).map_err(|e| e.to_string())?;
    let rep = run_asymptotic_probe(&cfg).map_err(|e| e.to_string())?;
    let spread = rep.check("distance over temperature deviation, spread across radii").ok_or("spread missing")?;
    let slope = rep.check("field gradient decay slope").map_or(f64::NAN, |c| c.measured);
    check(
        spread.status == Status::Pass && slope <= -2.5 && rep.runtime <= Duration::from_secs(900),
        format!("bounded-distance spread {:.3} (limit 2), gradient slope {slope:.2} (limit -2.5), {:.1?}", spread.measured, rep.runtime),
    )
}

fn report(n: usize, what: &str, outcome: std::thread::Result<Outcome>) -> bool {
    let (tag, detail, ok) = match outcome {
        Ok(Ok(d)) => ("PASS", d, true),
        Ok(Err(d)) => ("FAIL", d, false),
        Err(_) => ("FAIL", "panicked".to_string(), false),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n:>2} {tag}: {what}: {detail}");
    let _ = out.flush();
    ok
}

fn guarded(f: impl FnOnce() -> Outcome) -> std::thread::Result<Outcome> {
    catch_unwind(AssertUnwindSafe(f))
}

#[test]
fn acceptance() {
    let mut passed = 0;
    let mut total = 0;
    let mut tally = |ok: bool| {
        total += 1;
        passed += ok as usize;
    };
    tally(report(1, "isothermal oracle", guarded(isothermal_oracle)));
    tally(report(2, "ballistic exit", guarded(ballistic_exit)));

    let t = Instant::now();
    let steady = catch_unwind(|| fixed_point_solve(&heavy_light(0.0, None)));
    let steady_time = t.elapsed();
    let steady = match steady {
        Ok(Ok(s)) => Some(s),
        _ => None,
    };
    let suite: Result<SuiteReport, String> = match &steady {
        Some(s) => catch_unwind(AssertUnwindSafe(|| characteristics_run(s))).unwrap_or_else(|_| Err("panicked".into())),
        None => Err("no steady field".into()),
    };
    let with_suite = |f: fn(&SuiteReport) -> Outcome| -> std::thread::Result<Outcome> {
        match &suite {
            Ok(rep) => guarded(|| f(rep)),
            Err(e) => Ok(Err(format!("characteristics suite did not run: {e}"))),
        }
    };
    tally(report(3, "conservation along characteristics", with_suite(conservation)));
    tally(report(4, "exit-time bounds", with_suite(exit_bounds)));
    tally(report(5, "slab and half-space Poisson", guarded(poisson_solver)));
    tally(report(6, "Bessel K and Juttner normalization", guarded(bessel_and_juttner)));
    let with_steady = |f: &dyn Fn(&SteadySolution) -> Outcome| -> std::thread::Result<Outcome> {
        match &steady {
            Some(s) => guarded(|| f(s)),
            None => Ok(Err("steady solve failed".into())),
        }
    };
    tally(report(7, "steady contraction", with_steady(&|s| steady_contraction(s, steady_time))));
    tally(report(8, "dynamic decay", with_steady(&dynamic_decay)));
    tally(report(9, "continuity residual convergence", guarded(continuity)));
    tally(report(10, "specular regime", guarded(specular)));
    tally(report(11, "asymptotic probe", guarded(asymptotic)));
    tally(report(12, "trajectory sensitivities", with_suite(sensitivities)));
    let _ = writeln!(std::io::stdout(), "acceptance: {passed}/{total} criteria pass");
}
