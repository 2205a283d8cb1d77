//! Steady states by fixed-point iteration: transported boundary data,
//! momentum quadrature for the charge density, slab or half-space Poisson
//! solve, repeat.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::{bessel_k2_scaled, BoundarySpec};
use crate::characteristics::{backward_exit, specular_backward_chain, GRAZING_FRACTION};
use crate::error::{Error, Result};
use crate::field::{AxisymmetricGrid, FieldSnapshot};
use crate::physcore::{admissible_gradient_bound, characteristic_energy, total_energy, velocity, Species, SpeciesPair, Vec3, World};
use crate::poisson::{grid, solve_halfspace, solve_slab, DecayCertificate, Sampled3D, SlabPotential, SlabProfile, CALIBRATED_ELLIPTIC_CONSTANT};
use crate::quad::Rule;
use crate::report::{Check, Status};
use crate::sobol::Sobol;

/// Relative size of the discarded momentum tail.
pub const TAIL_FRACTION: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Slab,
    Pointwise3D,
}

/// Composite Gauss-Legendre layout for the `(|p_par|, p3)` integrals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentumQuadrature {
    /// Momentum cutoff; derived from `beta` when absent.
    pub p_cut: Option<f64>,
    pub panels: usize,
    pub per_panel: usize,
}

impl Default for MomentumQuadrature {
    fn default() -> Self {
        MomentumQuadrature { p_cut: None, panels: 24, per_panel: 8 }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyConfig {
    pub species: SpeciesPair,
    pub world: World,
    /// Boundary data in (plus, minus) order.
    pub boundary: [BoundarySpec; 2],
    pub geometry: Geometry,
    pub momentum: MomentumQuadrature,
    /// Slab `x3` grid; built from the density decay length when empty.
    pub grid: Vec<f64>,
    pub max_iter: usize,
    /// Stop once the weighted sup distance between iterates is below this.
    pub tol: f64,
    pub trace_tol: f64,
    pub probes: usize,
    pub seed: u64,
    /// Absolute cutoff of the weighted specular series.
    pub truncation_tol: f64,
    /// Run even when an explicit smallness gate fails.
    pub force: bool,
}

impl SteadyConfig {
    pub fn new(species: SpeciesPair, world: World, plus: BoundarySpec, minus: BoundarySpec) -> Self {
        SteadyConfig {
            species,
            world,
            boundary: [plus, minus],
            geometry: Geometry::Slab,
            momentum: MomentumQuadrature::default(),
            grid: Vec::new(),
            max_iter: 30,
            tol: 1e-11,
            trace_tol: 1e-12,
            probes: 512,
            seed: 0,
            truncation_tol: 1e-12,
            force: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.species.plus.validate()?;
        self.species.minus.validate()?;
        if !(self.tol > 0.0 && self.trace_tol > 0.0 && self.truncation_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be > 0".into()));
        }
        if self.max_iter == 0 || self.probes == 0 {
            return Err(Error::InvalidParameter("max_iter and probes must be >= 1".into()));
        }
        if self.momentum.panels == 0 || self.momentum.per_panel == 0 {
            return Err(Error::InvalidParameter("momentum quadrature needs panels and nodes".into()));
        }
        if let Some(pc) = self.momentum.p_cut {
            // the discarded tail must be below TAIL_FRACTION
            if (-self.world.beta * pc / 2.0).exp() > TAIL_FRACTION * (1.0 + 1e-9) && self.support().is_none() {
                return Err(Error::InvalidParameter(format!("p_cut = {pc} leaves a tail above {TAIL_FRACTION:e}")));
            }
        }
        Ok(())
    }

    pub fn species_list(&self) -> [(&Species, &BoundarySpec); 2] {
        [(&self.species.plus, &self.boundary[0]), (&self.species.minus, &self.boundary[1])]
    }

    // common compact support radius, if every nonzero boundary has one
    fn support(&self) -> Option<f64> {
        let mut out: Option<f64> = None;
        for b in &self.boundary {
            if b.is_zero() {
                continue;
            }
            let pm = b.p_max?;
            out = Some(out.map_or(pm, |o: f64| o.max(pm)));
        }
        out
    }

    /// Momentum cutoff with `e^{-beta p_cut / 2} = 1e-12`, or the support
    /// radius when that is smaller.
    pub fn p_cut(&self) -> f64 {
        let base = self.momentum.p_cut.unwrap_or(2.0 * (1.0 / TAIL_FRACTION).ln() / self.world.beta);
        match self.support() {
            Some(pm) => base.min(pm),
            None => base,
        }
    }

    /// Rule for `|p_par|` on `[0, p_cut]`; reused for `p3` on the same
    /// half line by evenness.
    pub fn momentum_rule(&self) -> Rule {
        Rule::uniform_panels(0.0, self.p_cut(), self.momentum.panels, self.momentum.per_panel)
    }

    /// Decay rate of the density envelope, `beta m_hat g / (2c)`.
    pub fn density_rate(&self) -> f64 {
        self.world.beta * self.species.m_hat() * self.world.g / (2.0 * self.world.c)
    }

    pub fn x3_grid(&self) -> Vec<f64> {
        if !self.grid.is_empty() {
            return self.grid.clone();
        }
        let rate = self.density_rate();
        let top = (1e14f64).ln() / rate;
        grid::geometric(0.02 / rate, 1.05, top)
    }

    /// Probe cloud `(x3, r, p3)` on `[0, X] x [0, p_cut] x [-p_cut, p_cut]`.
    pub fn probe_cloud(&self) -> Result<Vec<[f64; 3]>> {
        let pc = self.p_cut();
        let top = *self.x3_grid().last().unwrap();
        let pts = Sobol::in_box(&[0.0, 0.0, -pc], &[top, pc, pc], self.probes, self.seed)?;
        Ok(pts.into_iter().map(|v| [v[0], v[1], v[2]]).collect())
    }
}

/// `int e^{-beta p0} dp = 4 pi (mc)^2 K2(beta m c) / beta`.
pub fn exponential_moment(sp: &Species, w: &World, beta: f64) -> Result<f64> {
    let mc = sp.mass * w.c;
    let z = beta * mc;
    Ok(4.0 * PI * mc * mc * bessel_k2_scaled(z)? * (-z).exp() / beta)
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub tol: f64,
    pub truncation_tol: f64,
    /// `sup e^{beta p0} G`, needed to truncate the specular series.
    pub weighted_sup: f64,
    pub max_bounces: usize,
}

impl EvalOptions {
    pub fn new(spec: &BoundarySpec, sp: &Species, w: &World, tol: f64) -> Self {
        let weighted_sup = if w.epsilon > 0.0 { spec.weighted_sup(sp, w, w.beta) } else { 0.0 };
        EvalOptions { tol, truncation_tol: 1e-12, weighted_sup, max_bounces: 10_000 }
    }
}

/// Steady distribution at `(x, p)` by a backward trace to the wall. With
/// `epsilon > 0` the specular series is summed over the bounce chain until
/// the weighted remainder drops below the truncation tolerance.
pub fn eval_h(field: &FieldSnapshot, sp: &Species, w: &World, spec: &BoundarySpec, x: &Vec3, p: &Vec3, opts: &EvalOptions) -> Result<f64> {
    if spec.is_zero() {
        return Ok(0.0);
    }
    if w.epsilon == 0.0 {
        let rec = backward_exit(field, sp, w, x, p, opts.tol, None)?;
        return Ok(spec.profile(sp, w, &[rec.x_exit[0], rec.x_exit[1]], &rec.p_exit));
    }
    let e = characteristic_energy(sp, w, field.potential(field.start_time(), x), x[2], p);
    let scale = opts.weighted_sup * (-w.beta * e).exp();
    let chain = specular_backward_chain(field, sp, w, x, p, w.epsilon, opts.tol, opts.max_bounces, opts.truncation_tol, scale)?;
    let mut acc = 0.0;
    let mut weight = 1.0;
    for b in &chain.bounces {
        acc += weight * spec.profile(sp, w, &[b.x[0], b.x[1]], &b.p_in);
        weight *= w.epsilon;
    }
    Ok(acc)
}

/// Number of specular terms kept for a chain whose weighted scale is `scale`.
fn specular_terms(epsilon: f64, scale: f64, truncation_tol: f64) -> usize {
    let mut n = 1;
    let mut weight = epsilon;
    while weight * scale >= truncation_tol && n < 10_000 {
        weight *= epsilon;
        n += 1;
    }
    n
}

/// Slab fast path of [`eval_h`]: in a static slab field `|p_par|` and the
/// energy are conserved, so the wall momentum follows from
/// `p_b0 = p0 + (q phi + m g x3)/c` without tracing.
#[allow(clippy::too_many_arguments)]
pub fn slab_h(spec: &BoundarySpec, sp: &Species, w: &World, phi: f64, x3: f64, r: f64, p3: f64, opts: &EvalOptions) -> Result<f64> {
    if spec.is_zero() {
        return Ok(0.0);
    }
    let mc = sp.mass * w.c;
    let p0 = (mc * mc + r * r + p3 * p3).sqrt();
    let pb0 = p0 + (sp.charge * phi + sp.mass * w.g * x3) / w.c;
    let rad = pb0 * pb0 - mc * mc - r * r;
    if rad < 0.0 {
        return Err(Error::FieldBound(rad));
    }
    let g = spec.profile_slab(sp, w, r, rad.sqrt());
    if w.epsilon == 0.0 {
        return Ok(g);
    }
    // every bounce returns to the same wall momentum
    let n = specular_terms(w.epsilon, opts.weighted_sup * (-w.beta * pb0).exp(), opts.truncation_tol);
    let mut acc = 0.0;
    let mut weight = 1.0;
    for _ in 0..n {
        acc += weight * g;
        weight *= w.epsilon;
    }
    Ok(acc)
}

/// Central-difference momentum gradient of `h` and its weighted size
/// `e^{beta_tilde p0/2} e^{beta_tilde m g x3/(4c)} |grad_p h|`.
pub fn grad_p_h(field: &FieldSnapshot, sp: &Species, w: &World, spec: &BoundarySpec, x: &Vec3, p: &Vec3, h_fd: f64, opts: &EvalOptions) -> Result<(Vec3, f64)> {
    let rec = backward_exit(field, sp, w, x, p, opts.tol, None)?;
    let vb3 = velocity(sp, w, &rec.p_exit)[2];
    if x[2] == 0.0 || vb3.abs() < GRAZING_FRACTION * w.c {
        return Err(Error::Grazing(vb3.abs()));
    }
    let mut grad = [0.0; 3];
    for (i, gi) in grad.iter_mut().enumerate() {
        let (mut a, mut b) = (*p, *p);
        a[i] += h_fd;
        b[i] -= h_fd;
        *gi = (eval_h(field, sp, w, spec, x, &a, opts)? - eval_h(field, sp, w, spec, x, &b, opts)?) / (2.0 * h_fd);
    }
    let bt = w.beta_tilde;
    let weight = (0.5 * bt * total_energy(sp, w, p) + bt * sp.mass * w.g * x[2] / (4.0 * w.c)).exp();
    let mag = (grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]).sqrt();
    Ok((grad, weight * mag))
}

/// Everything the slab density integral needs besides the potential.
#[derive(Clone, Debug)]
pub struct DensityContext {
    pub rule: Rule,
    pub opts: [EvalOptions; 2],
}

impl DensityContext {
    pub fn new(cfg: &SteadyConfig) -> Self {
        let opts = |k: usize| {
            let (sp, spec) = cfg.species_list()[k];
            EvalOptions { truncation_tol: cfg.truncation_tol, ..EvalOptions::new(spec, sp, &cfg.world, cfg.trace_tol) }
        };
        DensityContext { rule: cfg.momentum_rule(), opts: [opts(0), opts(1)] }
    }
}

/// Charge density of one species at height `x3` in the slab potential.
pub fn species_density(cfg: &SteadyConfig, ctx: &DensityContext, k: usize, phi: &SlabPotential, x3: f64) -> Result<f64> {
    let (sp, spec) = cfg.species_list()[k];
    if spec.is_zero() {
        return Ok(0.0);
    }
    let v = phi.value(x3);
    let mut total = 0.0;
    for (r, wr) in ctx.rule.nodes.iter().zip(&ctx.rule.weights) {
        let mut inner = 0.0;
        for (p3, w3) in ctx.rule.nodes.iter().zip(&ctx.rule.weights) {
            inner += w3 * slab_h(spec, sp, &cfg.world, v, x3, *r, *p3, &ctx.opts[k])?;
        }
        // both signs of p3 give the same value
        total += wr * r * 2.0 * inner;
    }
    Ok(sp.charge * 2.0 * PI * total)
}

/// Signed charge density `sum q int h dp` at height `x3`.
pub fn charge_density(cfg: &SteadyConfig, ctx: &DensityContext, phi: &SlabPotential, x3: f64) -> Result<f64> {
    Ok(species_density(cfg, ctx, 0, phi, x3)? + species_density(cfg, ctx, 1, phi, x3)?)
}

/// Density envelope `sum |q| W C e^{-beta m g x3/(2c)}` with the explicit
/// moment constant `C = int e^{-beta p0} dp`; as a certificate it uses the
/// slower of the two rates.
pub fn density_certificate(cfg: &SteadyConfig, sups: &[f64; 2]) -> Result<DecayCertificate> {
    let mut amplitude = 0.0;
    for (k, (sp, _)) in cfg.species_list().into_iter().enumerate() {
        if sups[k] > 0.0 {
            amplitude += sp.charge_magnitude() * sups[k] * exponential_moment(sp, &cfg.world, cfg.world.beta)?;
        }
    }
    Ok(DecayCertificate { amplitude, rate: cfg.density_rate() })
}

/// `sup e^{beta p0} G` per species; infinite values are an error.
pub fn weighted_sups(cfg: &SteadyConfig) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    for (k, (sp, spec)) in cfg.species_list().into_iter().enumerate() {
        let v = spec.weighted_sup(sp, &cfg.world, cfg.world.beta);
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "boundary data of the {:?} species are not bounded in the beta = {} weight",
                sp.label, cfg.world.beta
            )));
        }
        out[k] = v;
    }
    Ok(out)
}

/// The explicit smallness conditions on the boundary data, plus the
/// condition with the calibrated elliptic constant as an advisory.
pub fn smallness_gates(cfg: &SteadyConfig) -> Result<Vec<Check>> {
    let w = &cfg.world;
    let sups = weighted_sups(cfg)?;
    let mut grads = [0.0; 2];
    for (k, (sp, spec)) in cfg.species_list().into_iter().enumerate() {
        grads[k] = spec.weighted_grad_sup(sp, w, w.beta_tilde);
    }
    let (p, m) = (&cfg.species.plus, &cfg.species.minus);
    let m_hat = cfg.species.m_hat();
    let charge_weighted = p.charge_magnitude() * sups[0] + m.charge_magnitude() * sups[1];
    let mut checks = Vec::new();

    let lhs = charge_weighted * (std::f64::consts::E + grads[0] + grads[1]).ln();
    let rhs = w.beta * ((p.mass + m.mass) / 8.0 * w.g * w.beta_tilde - (1.0 + w.b3));
    checks.push(Check::upper("boundary size vs beta_tilde", lhs, rhs, "steady smallness condition on beta_tilde"));

    let worst_grad = grads[0].max(grads[1]);
    checks.push(Check::upper(
        "boundary gradient smallness",
        (1.0 + w.beta_tilde / (m_hat * w.g)) * worst_grad,
        0.25,
        "steady smallness condition on the weighted data gradient",
    ));

    let bound = admissible_gradient_bound(w, &cfg.species);
    let worst = (p.charge_magnitude() * sups[0]).max(m.charge_magnitude() * sups[1]);
    let need = CALIBRATED_ELLIPTIC_CONSTANT / bound * worst * (1.0 + 2.0 * w.c / (w.beta * m_hat * w.g));
    checks.push(Check::advisory("beta vs calibrated elliptic constant", need, w.beta, "steady largeness condition on beta"));

    if w.epsilon > 0.0 {
        let pm = w.p_max.or_else(|| cfg.support());
        let mut worst = f64::INFINITY;
        if let Some(pm) = pm {
            worst = 0.0f64;
            for sp in cfg.species.both() {
                let mc = sp.mass * w.c;
                worst = worst.max(w.epsilon * (1.0 + w.beta_tilde) * (0.5 * w.beta_tilde * (mc * mc + pm * pm).sqrt()).exp());
            }
        }
        checks.push(Check::upper("specular epsilon gate", worst, 0.25, "specular smallness condition on epsilon"));
    }
    Ok(checks)
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Weighted sup distance between this iterate and the previous one.
    pub distance: f64,
    pub ratio: Option<f64>,
    pub grad_sup: f64,
    pub grad_bound: f64,
    pub admissible: bool,
    pub rho_sup: f64,
}

#[derive(Clone, Debug)]
pub struct SteadySolution {
    pub config: SteadyConfig,
    pub potential: Arc<SlabPotential>,
    pub field: FieldSnapshot,
    pub density: SlabProfile,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub gates: Vec<Check>,
    pub weighted_sups: [f64; 2],
}

impl SteadySolution {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.history.iter().filter_map(|r| r.ratio).collect()
    }
}

fn cauchy_weight(sp: &Species, w: &World, x3: f64, r: f64, p3: f64) -> f64 {
    let mc = sp.mass * w.c;
    let p0 = (mc * mc + r * r + p3 * p3).sqrt();
    (0.75 * w.beta_tilde * (p0 + sp.mass * w.g * x3 / (2.0 * w.c))).exp()
}

fn probe_values(cfg: &SteadyConfig, ctx: &DensityContext, phi: &SlabPotential, probes: &[[f64; 3]]) -> Result<Vec<[f64; 2]>> {
    probes
        .par_iter()
        .map(|q| {
            let v = phi.value(q[0]);
            let mut out = [0.0; 2];
            for (k, (sp, spec)) in cfg.species_list().into_iter().enumerate() {
                out[k] = slab_h(spec, sp, &cfg.world, v, q[0], q[1], q[2], &ctx.opts[k])?;
            }
            Ok(out)
        })
        .collect()
}

/// Fixed-point iteration in slab geometry starting from a zero potential.
pub fn fixed_point_solve(cfg: &SteadyConfig) -> Result<SteadySolution> {
    cfg.validate()?;
    if cfg.geometry != Geometry::Slab {
        return Err(Error::InvalidParameter("fixed_point_solve runs the slab geometry; use solve_pointwise3d".into()));
    }
    for (sp, spec) in cfg.species_list() {
        if !spec.is_slab() {
            return Err(Error::InvalidParameter(format!("boundary data of the {:?} species depend on the wall point", sp.label)));
        }
    }
    let gates = smallness_gates(cfg)?;
    if !cfg.force {
        if let Some(bad) = gates.iter().find(|c| c.status == Status::Fail) {
            return Err(Error::Gate(format!("{}: {:e} > {:e}", bad.name, bad.measured, bad.tolerance)));
        }
    }
    let sups = weighted_sups(cfg)?;
    let cert = density_certificate(cfg, &sups)?;
    let ctx = DensityContext::new(cfg);
    let x = cfg.x3_grid();
    let probes = cfg.probe_cloud()?;
    let weights: Vec<[f64; 2]> = probes
        .iter()
        .map(|q| [cauchy_weight(&cfg.species.plus, &cfg.world, q[0], q[1], q[2]), cauchy_weight(&cfg.species.minus, &cfg.world, q[0], q[1], q[2])])
        .collect();
    let bound = admissible_gradient_bound(&cfg.world, &cfg.species);

    let mut phi = Arc::new(SlabPotential::zero());
    let mut density = SlabProfile::new(x.clone(), vec![0.0; x.len()], Some(cert))?;
    let mut prev = vec![[0.0; 2]; probes.len()];
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    for ell in 1..=cfg.max_iter {
        let vals = probe_values(cfg, &ctx, &phi, &probes)?;
        let mut d = [0.0f64; 2];
        for ((a, b), wt) in vals.iter().zip(&prev).zip(&weights) {
            for k in 0..2 {
                d[k] = d[k].max(wt[k] * (a[k] - b[k]).abs());
            }
        }
        let distance = d[0] + d[1];
        prev = vals;
        let rho: Vec<f64> = x.par_iter().map(|&t| charge_density(cfg, &ctx, &phi, t)).collect::<Result<_>>()?;
        density = SlabProfile::new(x.clone(), rho, Some(cert))?;
        let next = solve_slab(&density)?;
        let grad_sup = next.grad_sup();
        let admissible = grad_sup <= bound;
        let ratio = history.last().and_then(|r| (r.distance > 0.0).then(|| distance / r.distance));
        history.push(IterationRecord { iteration: ell, distance, ratio, grad_sup, grad_bound: bound, admissible, rho_sup: density.sup() });
        if !admissible {
            return Err(Error::Inadmissible { measured: grad_sup, bound });
        }
        phi = Arc::new(next);
        if distance <= cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let distance = history.last().map_or(f64::NAN, |r| r.distance);
        return Err(Error::NoConvergence { iterations: cfg.max_iter, distance });
    }
    let field = FieldSnapshot::slab(phi.clone()).check_admissible(&cfg.world, &cfg.species)?;
    Ok(SteadySolution { config: cfg.clone(), potential: phi, field, density, history, converged, gates, weighted_sups: sups })
}

/// Evaluates the explicit steady bounds at the probes `(x3, r, p3)`: the
/// weighted bound on `h` along traced characteristics, the density
/// envelope, field admissibility and, for specular data, the vanishing of
/// `h` on the wall beyond the support radius.
pub fn theorem_bounds_report(sol: &SteadySolution, probes: &[[f64; 3]]) -> Result<Vec<Check>> {
    let cfg = &sol.config;
    let w = &cfg.world;
    let mut checks = Vec::new();

    let factor = 1.0 / (1.0 - w.epsilon);
    let mut worst = 0.0f64;
    for (k, (sp, spec)) in cfg.species_list().into_iter().enumerate() {
        if spec.is_zero() {
            continue;
        }
        let opts = EvalOptions { truncation_tol: cfg.truncation_tol, ..EvalOptions::new(spec, sp, w, cfg.trace_tol) };
        let ratios: Vec<f64> = probes
            .par_iter()
            .map(|q| {
                let x = [0.0, 0.0, q[0]];
                let p = [q[1], 0.0, q[2]];
                let h = eval_h(&sol.field, sp, w, spec, &x, &p, &opts)?;
                let e = characteristic_energy(sp, w, sol.potential.value(q[0]), q[0], &p);
                Ok(h * (w.beta * e).exp() / (sol.weighted_sups[k] * factor))
            })
            .collect::<Result<_>>()?;
        worst = ratios.into_iter().fold(worst, f64::max);
    }
    checks.push(Check::upper("weighted steady bound", worst, 1.0 + 1e-6, "steady weighted sup bound"));

    let amp = |beta_constant: bool| -> Result<Vec<(f64, f64)>> {
        let mut out = Vec::new();
        for (k, (sp, _)) in cfg.species_list().into_iter().enumerate() {
            let c = if beta_constant { 1.0 / w.beta } else { exponential_moment(sp, w, w.beta)? };
            out.push((sp.charge_magnitude() * sol.weighted_sups[k] * c, w.beta * sp.mass * w.g / (2.0 * w.c)));
        }
        Ok(out)
    };
    let envelope = |terms: &[(f64, f64)]| -> f64 {
        sol.density
            .x
            .iter()
            .zip(&sol.density.rho)
            .map(|(x3, r)| {
                let b: f64 = terms.iter().map(|(a, rate)| a * (-rate * x3).exp()).sum();
                if b > 0.0 { r.abs() / b } else if *r == 0.0 { 0.0 } else { f64::INFINITY }
            })
            .fold(0.0, f64::max)
    };
    checks.push(Check::upper("density envelope", envelope(&amp(false)?), 1.0 + 1e-9, "steady density decay bound, explicit moment constant"));
    checks.push(Check::advisory("density envelope with 1/beta", envelope(&amp(true)?), 1.0, "steady density decay bound as printed"));

    let bound = admissible_gradient_bound(w, &cfg.species);
    checks.push(Check::upper("field admissibility", sol.potential.grad_sup(), bound, "steady field gradient bound"));
    let curvature = 8.0 / (cfg.species.m_hat() * w.g) * (1.0 + w.b3 + sol.potential.second_sup());
    checks.push(Check::advisory("field curvature vs beta_tilde", curvature, w.beta_tilde, "steady second-derivative bound"));

    if w.epsilon > 0.0 {
        if let Some(pm) = w.p_max.or_else(|| cfg.support()) {
            let mut worst = 0.0f64;
            for (sp, spec) in cfg.species_list() {
                let opts = EvalOptions { truncation_tol: cfg.truncation_tol, ..EvalOptions::new(spec, sp, w, cfg.trace_tol) };
                for q in wall_support_probes(pm, 64) {
                    let h = eval_h(&sol.field, sp, w, spec, &[0.0, 0.0, 0.0], &q, &opts)?;
                    worst = worst.max(h.abs());
                }
            }
            checks.push(Check::upper("wall support", worst, 1e-10, "specular solutions vanish on the wall beyond p_max"));
        }
    }
    Ok(checks)
}

/// Wall momenta with `|p| >= p_max`, both incoming and outgoing.
pub fn wall_support_probes(p_max: f64, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let s = p_max * (1.0 + 0.5 * (i % 8) as f64 / 8.0);
            let th = PI * (i as f64 + 0.5) / n as f64;
            [s * th.sin(), 0.0, s * th.cos()]
        })
        .collect()
}

/// Spherical momentum rule: `|p|` nodes, `cos(theta)` nodes and a uniform
/// azimuthal count.
#[derive(Clone, Debug)]
pub struct SphericalRule {
    pub radial: Rule,
    pub polar: Rule,
    pub azimuth: usize,
}

impl SphericalRule {
    pub fn new(p_cut: f64, radial_panels: usize, polar_nodes: usize, azimuth: usize) -> Self {
        SphericalRule {
            radial: Rule::uniform_panels(0.0, p_cut, radial_panels, 6),
            polar: Rule::composite(&[-1.0, 0.0, 1.0], polar_nodes),
            azimuth: azimuth.max(1),
        }
    }

    /// Nodes and weights of the product rule.
    pub fn points(&self) -> Vec<(Vec3, f64)> {
        let mut out = Vec::with_capacity(self.radial.len() * self.polar.len() * self.azimuth);
        let dphi = 2.0 * PI / self.azimuth as f64;
        for (s, ws) in self.radial.nodes.iter().zip(&self.radial.weights) {
            for (ct, wc) in self.polar.nodes.iter().zip(&self.polar.weights) {
                let st = (1.0 - ct * ct).sqrt();
                for k in 0..self.azimuth {
                    let ph = (k as f64 + 0.5) * dphi;
                    out.push(([s * st * ph.cos(), s * st * ph.sin(), s * ct], ws * s * s * wc * dphi));
                }
            }
        }
        out
    }
}

/// Charge density at `x` by tracing every momentum node of `rule`.
pub fn charge_density_pointwise(field: &FieldSnapshot, cfg: &SteadyConfig, nodes: &[(Vec3, f64)], x: &Vec3) -> Result<f64> {
    let mut total = 0.0;
    for (sp, spec) in cfg.species_list() {
        if spec.is_zero() {
            continue;
        }
        let opts = EvalOptions { truncation_tol: cfg.truncation_tol, ..EvalOptions::new(spec, sp, &cfg.world, cfg.trace_tol) };
        let mut acc = 0.0;
        for (p, wt) in nodes {
            acc += wt * eval_h(field, sp, &cfg.world, spec, x, p, &opts)?;
        }
        total += sp.charge * acc;
    }
    Ok(total)
}

/// Node layout of the axisymmetric pointwise solve.
#[derive(Clone, Debug)]
pub struct Layout3D {
    /// Density quadrature in the cylinder radius and height.
    pub density_radial: Rule,
    pub density_vertical: Rule,
    pub n_theta: usize,
    /// Tabulation grid of the resulting potential.
    pub field_radii: Vec<f64>,
    pub field_heights: Vec<f64>,
    pub momentum: SphericalRule,
}

#[derive(Clone, Debug)]
pub struct Pointwise3DSolution {
    pub grid: Arc<AxisymmetricGrid>,
    pub field: FieldSnapshot,
    /// Density at the `(R, x3)` quadrature nodes, row-major in `R`.
    pub density: Vec<f64>,
    pub history: Vec<IterationRecord>,
}

fn tabulate(layout: &Layout3D, rho: &[f64]) -> Result<AxisymmetricGrid> {
    let nz = layout.density_vertical.len();
    let mut s = Sampled3D::default();
    let dth = 2.0 * PI / layout.n_theta as f64;
    for (i, (r, wr)) in layout.density_radial.nodes.iter().zip(&layout.density_radial.weights).enumerate() {
        for k in 0..layout.n_theta {
            let th = (k as f64 + 0.5) * dth;
            for (j, (z, wz)) in layout.density_vertical.nodes.iter().zip(&layout.density_vertical.weights).enumerate() {
                s.points.push([r * th.cos(), r * th.sin(), *z]);
                s.values.push(rho[i * nz + j]);
                s.weights.push(wr * r * dth * wz);
            }
        }
    }
    let queries: Vec<Vec3> = layout
        .field_radii
        .iter()
        .flat_map(|&r| layout.field_heights.iter().map(move |&z| [r, 0.0, z]))
        .collect();
    let vals = solve_halfspace(&s, &queries)?;
    Ok(AxisymmetricGrid {
        radii: layout.field_radii.clone(),
        heights: layout.field_heights.clone(),
        phi: vals.iter().map(|v| v.phi).collect(),
        d_radial: vals.iter().map(|v| v.grad[0]).collect(),
        d_vertical: vals.iter().map(|v| v.grad[2]).collect(),
    })
}

/// Axisymmetric fixed-point iteration with the density computed by traced
/// momentum quadrature and the potential by half-space kernel quadrature.
/// Slow; meant for small charges where two or three iterations suffice.
pub fn solve_pointwise3d(cfg: &SteadyConfig, layout: &Layout3D) -> Result<Pointwise3DSolution> {
    cfg.validate()?;
    if layout.field_radii.len() < 2 || layout.field_heights.len() < 2 || layout.field_heights[0] != 0.0 {
        return Err(Error::InvalidParameter("field grid needs >= 2 radii and heights starting at the wall".into()));
    }
    let nodes = layout.momentum.points();
    let bound = admissible_gradient_bound(&cfg.world, &cfg.species);
    let points: Vec<Vec3> = layout
        .density_radial
        .nodes
        .iter()
        .flat_map(|&r| layout.density_vertical.nodes.iter().map(move |&z| [r, 0.0, z]))
        .collect();
    let mut field = FieldSnapshot::zero();
    let mut prev = vec![0.0; points.len()];
    let mut history: Vec<IterationRecord> = Vec::new();
    for ell in 1..=cfg.max_iter {
        let rho: Vec<f64> = points.par_iter().map(|x| charge_density_pointwise(&field, cfg, &nodes, x)).collect::<Result<_>>()?;
        let scale = rho.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let distance = rho.iter().zip(&prev).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let grid = Arc::new(tabulate(layout, &rho)?);
        let next = FieldSnapshot::sampled(grid.clone());
        let ratio = history.last().and_then(|r| (r.distance > 0.0).then(|| distance / r.distance));
        history.push(IterationRecord {
            iteration: ell,
            distance,
            ratio,
            grad_sup: next.grad_bound,
            grad_bound: bound,
            admissible: next.grad_bound <= bound,
            rho_sup: scale,
        });
        field = next.check_admissible(&cfg.world, &cfg.species)?;
        prev = rho;
        if distance <= cfg.tol * scale.max(1e-300) || distance == 0.0 {
            return Ok(Pointwise3DSolution { grid, field, density: prev, history });
        }
    }
    let distance = history.last().map_or(f64::NAN, |r| r.distance);
    Err(Error::NoConvergence { iterations: cfg.max_iter, distance })
}
