//! Bundled property suites. Each returns a [`SuiteReport`] whose checks are
//! pass/fail for explicit inequalities and advisory for claims that only
//! hold up to an unspecified constant.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::{BoundaryKind, BoundarySpec};
use crate::characteristics::{
    backward_exit, exit_bound_report, integrate, kinetic_distance_envelope, specular_backward_chain,
    trajectory_sensitivity_check,
};
use crate::error::{Error, Result};
use crate::field::FieldSnapshot;
use crate::physcore::{characteristic_energy, total_energy, PhaseState, Species, Vec3, World};
use crate::report::{Check, Status};
use crate::sobol::Sobol;
use crate::steady::{eval_h, fixed_point_solve, smallness_gates, solve_pointwise3d, theorem_bounds_report, EvalOptions, Layout3D, SteadyConfig};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    /// Wall-clock time; kept out of the JSON so reports stay byte-stable.
    #[serde(skip)]
    pub runtime: Duration,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64) -> Self {
        SuiteReport { suite: suite.into(), seed, checks: Vec::new(), runtime: Duration::ZERO }
    }

    pub fn passed(&self) -> bool {
        crate::report::all_pass(&self.checks)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Phase-space box and field for the characteristics suite.
#[derive(Clone, Debug)]
pub struct CharacteristicsConfig {
    pub species: Species,
    pub world: World,
    pub field: FieldSnapshot,
    /// Lower and upper corners over `(x1, x2, x3, p1, p2, p3)`.
    pub lo: [f64; 6],
    pub hi: [f64; 6],
    pub tol: f64,
    /// Samples used for the costlier sensitivity and envelope checks.
    pub derivative_samples: usize,
    pub h_fd: f64,
    /// Integrator tolerance of the difference quotients; they amplify the
    /// global error, so this sits below `tol`.
    pub sensitivity_tol: f64,
}

impl CharacteristicsConfig {
    pub fn new(species: Species, world: World, field: FieldSnapshot, lo: [f64; 6], hi: [f64; 6]) -> Self {
        CharacteristicsConfig { species, world, field, lo, hi, tol: 1e-10, derivative_samples: 1000, h_fd: 1e-5, sensitivity_tol: 1e-13 }
    }

    pub fn samples(&self, n: usize, seed: u64) -> Result<Vec<PhaseState>> {
        Sobol::in_box(&self.lo, &self.hi, n, seed)?
            .into_iter()
            .map(|z| PhaseState::new([z[0], z[1], z[2]], [z[3], z[4], z[5]]))
            .collect()
    }
}

/// Exit-time and height bounds, conservation along traces, the kinetic
/// distance envelope and the trajectory-derivative identities.
pub fn run_characteristics_suite(cfg: &CharacteristicsConfig, n_samples: usize, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let (sp, w, field) = (&cfg.species, &cfg.world, &cfg.field);
    if !field.is_admissible() {
        return Err(Error::Inadmissible { measured: field.grad_bound, bound: crate::physcore::admissible_gradient_bound(w, &crate::physcore::SpeciesPair::symmetric(sp.charge_magnitude())) });
    }
    let mut rep = SuiteReport::new("characteristics", seed);
    let samples = cfg.samples(n_samples, seed)?;

    let bounds = exit_bound_report(field, sp, w, &samples, cfg.tol)?;
    rep.checks.push(Check::upper("exit bound violations", bounds.violations.len() as f64, 0.0, "explicit exit-time and apex-height bounds"));
    for (name, ratio) in &bounds.worst_ratio {
        rep.checks.push(Check::advisory(&format!("worst ratio: {name}"), *ratio, 1.0, "explicit exit-time and apex-height bounds"));
    }

    let drifts: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let rec = backward_exit(field, sp, w, &s.x, &s.p, cfg.tol, None)?;
            let traj = integrate(field, sp, w, s, -rec.t_exit, cfg.tol)?;
            Ok((traj.energy_drift(), traj.horizontal_momentum_drift()))
        })
        .collect::<Result<_>>()?;
    let e = drifts.iter().fold(0.0f64, |m, d| m.max(d.0));
    rep.checks.push(Check::upper("energy drift", e, 1e-7, "conservation of the characteristic energy"));
    if field.is_slab() {
        let h = drifts.iter().fold(0.0f64, |m, d| m.max(d.1));
        rep.checks.push(Check::upper("horizontal momentum drift", h, 1e-7, "conservation of |p_par| without horizontal fields"));
    }

    let n_der = cfg.derivative_samples.min(samples.len());
    let envelope: Vec<f64> = samples[..n_der]
        .par_iter()
        .filter(|s| s.x[2] > 0.0)
        .map(|s| kinetic_distance_envelope(field, sp, w, &s.x, &s.p, cfg.tol).map(|r| r.worst_exponent_ratio))
        .collect::<Result<_>>()?;
    let worst_env = envelope.iter().fold(0.0f64, |m, v| m.max(*v));
    rep.checks.push(Check::upper("kinetic distance envelope", worst_env, 1.0, "exponential envelope of the kinetic distance"));

    if field.is_static() {
        let sens: Vec<Option<f64>> = samples[..n_der]
            .par_iter()
            .map(|s| match trajectory_sensitivity_check(field, sp, w, &s.x, &s.p, cfg.h_fd, cfg.sensitivity_tol) {
                Ok(r) => Ok(Some(r.max_residual)),
                Err(Error::Grazing(_)) | Err(Error::InvalidParameter(_)) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        let used: Vec<f64> = sens.iter().flatten().copied().collect();
        let worst = used.iter().fold(0.0f64, |m, v| m.max(*v));
        rep.checks.push(Check::upper("sensitivity identity residual", worst, 1e-4, "derivatives of exit time, position and momentum"));
        rep.checks.push(Check::advisory("sensitivity samples excluded", (sens.len() - used.len()) as f64, sens.len() as f64, "grazing or wall-adjacent samples"));
    }
    rep.runtime = start.elapsed();
    Ok(rep)
}

/// Closed form of the isothermal steady state in a zero field.
pub fn isothermal_closed_form(sp: &Species, w: &World, x3: f64, p: &Vec3) -> f64 {
    let e = total_energy(sp, w, p) + sp.mass * w.g * x3 / w.c;
    (-0.5 * e).exp() / (sp.charge_magnitude() * sp.mass * sp.mass)
}

/// Isothermal fixed-point run against its explicit solution.
pub fn run_oracle_suite(cfg: &SteadyConfig) -> Result<SteadyOracle> {
    let start = Instant::now();
    for (_, spec) in cfg.species_list() {
        if !matches!(spec.kind, BoundaryKind::IsothermalSimple) || spec.p_max.is_some() {
            return Err(Error::InvalidParameter("the oracle suite needs IsothermalSimple data without support cutoff".into()));
        }
    }
    let mut rep = SuiteReport::new("oracle", cfg.seed);
    let sol = fixed_point_solve(cfg)?;
    rep.checks.extend(sol.gates.iter().cloned().map(|mut c| {
        // the oracle is exact whether or not the smallness gates hold
        if c.status == Status::Fail {
            c.status = Status::Advisory;
        }
        c
    }));
    rep.checks.push(Check::upper("iterations", sol.iterations() as f64, 2.0, "isothermal data give an explicit solution"));
    rep.checks.push(Check::upper("potential sup", sol.potential.sup(), 1e-10, "the isothermal potential vanishes"));
    rep.checks.push(Check::upper("density sup", sol.density.sup(), 1e-8, "the isothermal densities cancel"));

    let probes = cfg.probe_cloud()?;
    let w = &cfg.world;
    let mut worst = 0.0f64;
    for (sp, spec) in cfg.species_list() {
        let opts = EvalOptions::new(spec, sp, w, cfg.trace_tol);
        let e = probes
            .par_iter()
            .map(|q| {
                let x = [0.0, 0.0, q[0]];
                let p = [q[1], 0.0, q[2]];
                let h = eval_h(&sol.field, sp, w, spec, &x, &p, &opts)?;
                Ok((0.5 * total_energy(sp, w, &p)).exp() * (h - isothermal_closed_form(sp, w, q[0], &p)).abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        worst = e.into_iter().fold(worst, f64::max);
    }
    rep.checks.push(Check::upper("weighted probe error", worst, 1e-6, "closed-form isothermal distribution"));
    rep.checks.extend(theorem_bounds_report(&sol, &probes)?);
    rep.runtime = start.elapsed();
    Ok(SteadyOracle { report: rep, solution: sol })
}

/// Oracle report together with the solution it checked.
#[derive(Clone, Debug)]
pub struct SteadyOracle {
    pub report: SuiteReport,
    pub solution: crate::steady::SteadySolution,
}

/// Setup of the far-field probe.
#[derive(Clone, Debug)]
pub struct AsymptoticConfig {
    /// Non-isothermal steady problem in pointwise 3D geometry.
    pub steady: SteadyConfig,
    pub layout: Layout3D,
    pub radii: Vec<f64>,
    /// Weight exponent; needs `2 (|q+| + |q-|) < beta'^3 <= 1/128`.
    pub beta_prime: f64,
    /// Heights and momenta probed at every radius.
    pub heights: Vec<f64>,
    pub momenta: Vec<Vec3>,
    /// Height at which the field gradient is sampled.
    pub gradient_height: f64,
}

impl AsymptoticConfig {
    /// Equal masses `m = c = g = 1`, charges `+-charge`, the positive
    /// species at wall temperature `1 + (20 + |x|)^-4` and the negative one
    /// isothermal. Gates are forced: the far-field regime sits outside the
    /// explicit smallness conditions.
    pub fn standard(charge: f64, beta_prime: f64, radii: Vec<f64>) -> Result<Self> {
        use crate::boundary::TemperatureProfile;
        use crate::physcore::Label;
        use crate::quad::Rule;
        use crate::steady::{Geometry, SphericalRule};
        let w = World { c: 1.0, g: 1.0, b3: 0.0, beta: 0.45, beta_tilde: 0.45, epsilon: 0.0, p_max: None };
        let species = crate::physcore::SpeciesPair::new(Species::new(Label::Plus, 1.0, charge)?, Species::new(Label::Minus, 1.0, -charge)?)?;
        let warm = TemperatureProfile::Algebraic { base: 1.0, amplitude: 1.0, offset: 20.0, power: 4.0 };
        let mut steady = SteadyConfig::new(
            species,
            w,
            BoundarySpec::new(BoundaryKind::SimpleNonIsothermal(warm)),
            BoundarySpec::new(BoundaryKind::SimpleNonIsothermal(TemperatureProfile::Constant(1.0))),
        );
        steady.geometry = Geometry::Pointwise3D;
        steady.force = true;
        // the screened fixed point contracts by about 0.17 per sweep; five
        // digits are plenty for a spread ratio
        steady.tol = 1e-5;
        steady.trace_tol = 1e-10;
        let r_top = radii.iter().fold(0.0f64, |m, r| m.max(*r));
        let mut field_radii = vec![0.0, 1.0, 2.0, 3.0];
        field_radii.extend(radii.iter().copied());
        field_radii.extend([1.5 * r_top, 2.0 * r_top, 2.5 * r_top]);
        field_radii.sort_by(f64::total_cmp);
        field_radii.dedup();
        let gradient_height = 1.0;
        let layout = Layout3D {
            density_radial: Rule::uniform_panels(0.0, 2.5 * r_top, 8, 3),
            density_vertical: Rule::composite(&[0.0, 1.0, 3.0, 6.0, 10.0, 16.0, 24.0, 34.0], 2),
            n_theta: 24,
            field_radii,
            field_heights: vec![0.0, 0.5, gradient_height, 2.0, 3.0, 5.0, 8.0, 12.0, 16.0, 24.0, 34.0],
            momentum: SphericalRule::new(36.0, 3, 6, 6),
        };
        Ok(AsymptoticConfig {
            steady,
            layout,
            radii,
            beta_prime,
            heights: vec![0.5, 2.0],
            momenta: vec![[0.0, 0.0, 1.0], [1.0, 0.0, -1.0], [0.5, 0.5, 0.5], [0.0, 0.0, -2.0], [-1.5, 0.0, 0.2]],
            gradient_height,
        })
    }
}

/// Distance to the isothermal solution at growing horizontal radii.
pub fn run_asymptotic_probe(cfg: &AsymptoticConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let sc = &cfg.steady;
    let w = &sc.world;
    if cfg.radii.len() < 2 {
        return Err(Error::InvalidParameter("need at least two radii".into()));
    }
    let bp3 = cfg.beta_prime.powi(3);
    let charges = sc.species.plus.charge_magnitude() + sc.species.minus.charge_magnitude();
    let mut rep = SuiteReport::new("asymptotic", sc.seed);
    rep.checks.push(Check::advisory("charge regime 2(|q+| + |q-|)", 2.0 * charges, bp3, "far-field theorem charge condition"));
    if bp3 > 1.0 / 128.0 {
        return Err(Error::InvalidParameter("beta_prime^3 must be <= 1/128".into()));
    }
    // wall temperatures must obey the algebraic approach to one
    let wall: Vec<[f64; 2]> = (0..400).map(|i| [i as f64 * 0.5, 0.0]).collect();
    for (_, spec) in sc.species_list() {
        match &spec.kind {
            BoundaryKind::SimpleNonIsothermal(t) => t.check(&wall, true)?,
            _ => return Err(Error::InvalidParameter("asymptotic probe needs SimpleNonIsothermal data".into())),
        }
    }
    let sol = solve_pointwise3d(sc, &cfg.layout)?;
    let field = &sol.field;

    let mut per_radius = Vec::with_capacity(cfg.radii.len());
    let mut grads = Vec::with_capacity(cfg.radii.len());
    for &radius in &cfg.radii {
        let mut q_max = 0.0f64;
        for (sp, spec) in sc.species_list() {
            let opts = EvalOptions::new(spec, sp, w, sc.trace_tol);
            let pts: Vec<(Vec3, Vec3)> = cfg.heights.iter().flat_map(|&z| cfg.momenta.iter().map(move |p| ([radius, 0.0, z], *p))).collect();
            let vals = pts
                .par_iter()
                .map(|(x, p)| {
                    let h = eval_h(field, sp, w, spec, x, p, &opts)?;
                    let h_iso = isothermal_closed_form(sp, w, x[2], p);
                    let weight = (cfg.beta_prime * characteristic_energy(sp, w, field.potential(0.0, x), x[2], p)).exp();
                    let bracket = (1.0 + radius * radius).powf(1.5);
                    Ok(bracket * weight * (h_iso - h).abs())
                })
                .collect::<Result<Vec<f64>>>()?;
            q_max = vals.into_iter().fold(q_max, f64::max);
        }
        per_radius.push(q_max);
        let g = field.gradient(0.0, &[radius, 0.0, cfg.gradient_height]);
        let bracket = (1.0 + radius * radius + cfg.gradient_height.powi(2)).sqrt();
        grads.push((bracket, (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()));
    }
    for ((r, _), (_, g)) in cfg.radii.iter().zip(&grads).zip(&grads) {
        rep.checks.push(Check::advisory(&format!("field gradient at radius {r}"), *g, f64::INFINITY, "far-field gradient of the potential difference"));
    }
    // The wall data differ from the isothermal ones by at most
    // (20 + |x|)^-4, so the distance scaled by that deviation must not depend
    // on the radius; the weighted distance is then bounded by the ratio times
    // sup_s <s>^3 (20 + s)^-4.
    let deviation = |r: f64| (1.0 + r * r).powf(1.5) * (20.0 + r).powi(-4);
    let ratios: Vec<f64> = cfg.radii.iter().zip(&per_radius).map(|(r, q)| q / deviation(*r)).collect();
    for (r, q) in cfg.radii.iter().zip(&per_radius) {
        rep.checks.push(Check::advisory(&format!("weighted distance at radius {r}"), *q, f64::INFINITY, "far-field weighted distance to the isothermal solution"));
    }
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    rep.checks.push(Check::upper("distance over temperature deviation, spread across radii", hi / lo, 2.0, "far-field weighted distance stays bounded"));
    let ceiling = (0..2000).map(|i| deviation(i as f64 * 0.5)).fold(0.0f64, f64::max);
    rep.checks.push(Check::advisory("implied radius-independent bound", hi * ceiling, f64::INFINITY, "far-field weighted distance stays bounded"));
    let slope = loglog_slope(&grads).unwrap_or(f64::NAN);
    rep.checks.push(Check::advisory("field gradient decay slope", slope, -2.5, "far-field gradient decays like <x>^-3"));
    rep.runtime = start.elapsed();
    Ok(rep)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(pts: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = pts.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Specular steady solve with the epsilon gate, the wall support check and
/// an audit of the bounce-chain truncation.
pub fn run_specular_suite(cfg: &SteadyConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let w = &cfg.world;
    let mut rep = SuiteReport::new("specular", cfg.seed);
    let mut run = cfg.clone();
    // gates are reported, never fatal here
    let gates = smallness_gates(cfg)?;
    if gates.iter().any(|c| c.status == Status::Fail) {
        run.force = true;
    }
    rep.checks.extend(gates.into_iter().map(|mut c| {
        if c.status == Status::Fail {
            c.status = Status::Advisory;
        }
        c
    }));
    let sol = fixed_point_solve(&run)?;
    rep.checks.push(Check::upper("converged", if sol.converged { 0.0 } else { 1.0 }, 0.0, "specular steady existence"));
    rep.checks.extend(theorem_bounds_report(&sol, &run.probe_cloud()?)?);

    // truncation audit: the dropped tail of every chain is below tolerance
    let probes = run.probe_cloud()?;
    let mut worst_tail = 0.0f64;
    for (sp, spec) in run.species_list() {
        if spec.is_zero() {
            continue;
        }
        let opts = EvalOptions { truncation_tol: run.truncation_tol, ..EvalOptions::new(spec, sp, w, run.trace_tol) };
        let tails = probes
            .par_iter()
            .take(64)
            .map(|q| {
                let x = [0.0, 0.0, q[0]];
                let p = [q[1], 0.0, q[2]];
                let e = characteristic_energy(sp, w, sol.field.potential(0.0, &x), x[2], &p);
                let scale = opts.weighted_sup * (-w.beta * e).exp();
                let chain = specular_backward_chain(&sol.field, sp, w, &x, &p, w.epsilon, opts.tol, opts.max_bounces, opts.truncation_tol, scale)?;
                // remainder of the geometric series past the last kept term
                let k = chain.bounces.len() as i32;
                Ok(w.epsilon.powi(k) * scale / (1.0 - w.epsilon))
            })
            .collect::<Result<Vec<f64>>>()?;
        worst_tail = tails.into_iter().fold(worst_tail, f64::max);
    }
    let tail_tol = run.truncation_tol / (1.0 - w.epsilon);
    rep.checks.push(Check::upper("bounce chain truncation remainder", worst_tail, tail_tol, "specular series truncation"));

    // with epsilon = 0 the chain must reproduce the plain exit bit for bit
    let mut zero = run.clone();
    zero.world.epsilon = 0.0;
    let mut worst_diff = 0.0f64;
    for (sp, spec) in zero.species_list() {
        if spec.is_zero() {
            continue;
        }
        let opts = EvalOptions::new(spec, sp, &zero.world, zero.trace_tol);
        for q in probes.iter().take(32) {
            let x = [0.0, 0.0, q[0]];
            let p = [q[1], 0.0, q[2]];
            let plain = eval_h(&sol.field, sp, &zero.world, spec, &x, &p, &opts)?;
            let chain = specular_backward_chain(&sol.field, sp, &zero.world, &x, &p, 0.0, opts.tol, 1, 0.0, 1.0)?;
            let b = &chain.bounces[0];
            let via_chain = spec.profile(sp, &zero.world, &[b.x[0], b.x[1]], &b.p_in);
            worst_diff = worst_diff.max((plain - via_chain).abs());
        }
    }
    rep.checks.push(Check::upper("epsilon zero reproduces inflow", worst_diff, 0.0, "specular data reduce to inflow at epsilon = 0"));
    rep.runtime = start.elapsed();
    Ok(rep)
}

/// Builds the boundary spec used by the specular examples: exponential data
/// with a smooth cutoff at `p_max`.
pub fn compact_exponential(amplitude: f64, rate: f64, p_max: f64) -> BoundarySpec {
    BoundarySpec::new(BoundaryKind::Exponential { amplitude, rate }).with_support(p_max)
}
