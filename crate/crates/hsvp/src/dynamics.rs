//! Slab-symmetric evolution of a perturbation `f = F - h` around a steady
//! state, on a grid over `(x3, |p_par|, p3)`.
//!
//! Each step traces every node backward over one time step and applies the
//! transported form: the value at the departure point plus the time
//! integral of the forcing `q psi'(X3) d_{p3} h` along the way. Wall hits
//! use the boundary rule (zero perturbation on incoming momenta for inflow,
//! `epsilon` times the reflected value for specular data). A frozen-field
//! predictor is followed by a corrector in the time-centred field.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::BoundarySpec;
use crate::error::{Error, Result};
use crate::ode::{self, Event, Options};
use crate::physcore::{admissible_gradient_bound, derived_constants, Species, SpeciesPair, World};
use crate::poisson::{solve_slab, DecayCertificate, SlabPotential, SlabProfile};
use crate::quad::Rule;
use crate::report::Check;
use crate::steady::{slab_h, EvalOptions, SteadySolution};

/// Steady background the perturbation lives on.
#[derive(Clone, Debug)]
pub struct Background {
    pub species: SpeciesPair,
    pub world: World,
    pub boundary: [BoundarySpec; 2],
    pub phi_h: Arc<SlabPotential>,
    opts: [EvalOptions; 2],
}

impl Background {
    pub fn new(species: SpeciesPair, world: World, boundary: [BoundarySpec; 2], phi_h: Arc<SlabPotential>) -> Self {
        let opts = [
            EvalOptions::new(&boundary[0], &species.plus, &world, 1e-12),
            EvalOptions::new(&boundary[1], &species.minus, &world, 1e-12),
        ];
        Background { species, world, boundary, phi_h, opts }
    }

    pub fn from_steady(sol: &SteadySolution) -> Self {
        let cfg = &sol.config;
        Background::new(cfg.species, cfg.world, cfg.boundary.clone(), sol.potential.clone())
    }

    pub fn species(&self, k: usize) -> &Species {
        if k == 0 {
            &self.species.plus
        } else {
            &self.species.minus
        }
    }

    /// Steady distribution of species `k` at `(x3, r, p3)`.
    pub fn h(&self, k: usize, x3: f64, r: f64, p3: f64) -> f64 {
        slab_h(&self.boundary[k], self.species(k), &self.world, self.phi_h.value(x3), x3, r, p3, &self.opts[k]).unwrap_or(0.0)
    }

    /// Central difference of `h` in `p3`.
    pub fn dh_dp3(&self, k: usize, x3: f64, r: f64, p3: f64) -> f64 {
        if self.boundary[k].is_zero() {
            return 0.0;
        }
        let d = 1e-5 * (1.0 + p3.abs());
        (self.h(k, x3, r, p3 + d) - self.h(k, x3, r, p3 - d)) / (2.0 * d)
    }

    /// Steady characteristic energy `p0 + (q phi_h + m g x3)/c`.
    pub fn energy(&self, k: usize, x3: f64, r: f64, p3: f64) -> f64 {
        let sp = self.species(k);
        let w = &self.world;
        let mc = sp.mass * w.c;
        (mc * mc + r * r + p3 * p3).sqrt() + (sp.charge * self.phi_h.value(x3) + sp.mass * w.g * x3) / w.c
    }
}

/// Tensor grid: uniform `x3` nodes from the wall, quadrature nodes in
/// `|p_par|` and `p3`.
#[derive(Clone, Debug)]
pub struct PhaseGrid {
    pub x3: Vec<f64>,
    pub r: Rule,
    pub p3: Rule,
}

impl PhaseGrid {
    /// `nx` uniform heights on `[0, x_top]`, `nr` Gauss-Legendre radii on
    /// `[0, r_max]` (in panels of 4) and `p3` nodes on the symmetric panel
    /// breaks `+-breaks` with `per_panel` nodes each.
    pub fn new(x_top: f64, nx: usize, r_max: f64, nr: usize, p3_breaks: &[f64], per_panel: usize) -> Result<Self> {
        if nx < 4 || nr < 4 || per_panel == 0 || p3_breaks.len() < 2 || p3_breaks[0] != 0.0 {
            return Err(Error::InvalidParameter("phase grid needs >= 4 nodes per axis and p3 breaks starting at 0".into()));
        }
        if p3_breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("p3 breaks must increase".into()));
        }
        let x3 = (0..nx).map(|i| x_top * i as f64 / (nx - 1) as f64).collect();
        let r = Rule::uniform_panels(0.0, r_max, nr.div_ceil(4), 4);
        let mut breaks: Vec<f64> = p3_breaks.iter().rev().map(|b| -b).collect();
        breaks.extend_from_slice(&p3_breaks[1..]);
        let p3 = Rule::composite(&breaks, per_panel);
        Ok(PhaseGrid { x3, r, p3 })
    }

    /// Geometric `p3` panel breaks `0, b1, ...` reaching `p_top` in `panels`.
    pub fn graded_breaks(first: f64, p_top: f64, panels: usize) -> Vec<f64> {
        let panels = panels.max(1);
        // ratio q with first * (q^n - 1)/(q - 1) = p_top
        let (mut lo, mut hi) = (1.0f64, 4.0f64);
        let total = |q: f64| if (q - 1.0).abs() < 1e-12 { first * panels as f64 } else { first * (q.powi(panels as i32) - 1.0) / (q - 1.0) };
        if total(1.0) >= p_top {
            return (0..=panels).map(|i| p_top * i as f64 / panels as f64).collect();
        }
        while total(hi) < p_top {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) < p_top {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = 0.5 * (lo + hi);
        let mut b = vec![0.0];
        let mut step = first;
        for i in 0..panels {
            let next = if i + 1 == panels { p_top } else { b[i] + step };
            b.push(next);
            step *= q;
        }
        b
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.x3.len(), self.r.len(), self.p3.len())
    }

    pub fn len(&self) -> usize {
        let (a, b, c) = self.dims();
        a * b * c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, l: usize) -> usize {
        let (_, nr, np) = self.dims();
        (i * nr + j) * np + l
    }

    #[inline]
    pub fn node(&self, idx: usize) -> (f64, f64, f64) {
        let (_, nr, np) = self.dims();
        let l = idx % np;
        let j = (idx / np) % nr;
        let i = idx / (np * nr);
        (self.x3[i], self.r.nodes[j], self.p3.nodes[l])
    }

    pub fn x_top(&self) -> f64 {
        *self.x3.last().unwrap()
    }

    pub fn r_top(&self) -> f64 {
        self.r.weights.iter().sum()
    }

    pub fn p_top(&self) -> f64 {
        0.5 * self.p3.weights.iter().sum::<f64>()
    }
}

// Four-point Lagrange weights on a possibly nonuniform axis. Returns the
// first stencil index, or None when `v` lies outside `[lo, hi]`.
#[inline]
fn stencil(nodes: &[f64], v: f64, lo: f64, hi: f64) -> Option<(usize, [f64; 4])> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    let n = nodes.len();
    let i = nodes.partition_point(|&a| a <= v).saturating_sub(1);
    let s = i.saturating_sub(1).min(n - 4);
    let x = [nodes[s], nodes[s + 1], nodes[s + 2], nodes[s + 3]];
    let mut w = [1.0; 4];
    for a in 0..4 {
        for b in 0..4 {
            if a != b {
                w[a] *= (v - x[b]) / (x[a] - x[b]);
            }
        }
    }
    Some((s, w))
}

/// Initial perturbation `f0(species, x3, |p_par|, p3)`.
#[derive(Clone)]
pub struct InitialData {
    pub f0: Arc<dyn Fn(&Species, f64, f64, f64) -> f64 + Send + Sync>,
    /// Declared `sup e^{beta p0/2} e^{m g beta x3/(4c)} |f0|`, if known.
    pub weighted_bound: Option<f64>,
}

impl std::fmt::Debug for InitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "InitialData(weighted_bound = {:?})", self.weighted_bound)
    }
}

impl InitialData {
    pub fn zero() -> Self {
        InitialData { f0: Arc::new(|_, _, _, _| 0.0), weighted_bound: Some(0.0) }
    }
}

#[derive(Clone, Debug)]
pub struct EvolveConfig {
    pub grid: PhaseGrid,
    pub dt: f64,
    pub t_end: f64,
    /// Tolerance of the one-step traces.
    pub tol: f64,
    /// Largest allowed `c dt / dx3`.
    pub cfl_limit: f64,
    /// Off: transport in the frozen steady field with no forcing.
    pub self_consistent: bool,
    /// Clip `F = h + f` at zero after interpolation.
    pub clip: bool,
    /// Keep every `snapshot_every`-th state in the series (0 = none).
    pub snapshot_every: usize,
}

impl EvolveConfig {
    pub fn new(grid: PhaseGrid, dt: f64, t_end: f64) -> Self {
        EvolveConfig { grid, dt, t_end, tol: 1e-10, cfl_limit: 8.0, self_consistent: true, clip: true, snapshot_every: 0 }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Perturbation on the grid with its density and potential.
#[derive(Clone, Debug)]
pub struct PerturbationState {
    pub t: f64,
    pub f: [Vec<f64>; 2],
    pub varrho: Vec<f64>,
    pub psi: Arc<SlabPotential>,
    pub norm: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LedgerEntry {
    pub t: f64,
    pub norm: f64,
    pub psi_grad_sup: f64,
    pub total_grad_sup: f64,
}

/// Density and vertical flux at one time.
#[derive(Clone, Debug, Serialize)]
pub struct Moments {
    pub t: f64,
    pub varrho: Vec<f64>,
    pub flux: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub x3: Vec<f64>,
    pub ledger: Vec<LedgerEntry>,
    pub moments: Vec<Moments>,
    pub snapshots: Vec<PerturbationState>,
    pub last: PerturbationState,
    pub cfl: f64,
}

/// `e^{beta p0/8 + m g beta x3/(16c)}` for species `k`.
#[inline]
fn decay_weight(bg: &Background, k: usize, x3: f64, r: f64, p3: f64) -> f64 {
    let sp = bg.species(k);
    let w = &bg.world;
    let mc = sp.mass * w.c;
    let p0 = (mc * mc + r * r + p3 * p3).sqrt();
    (w.beta * p0 / 8.0 + sp.mass * w.g * w.beta * x3 / (16.0 * w.c)).exp()
}

/// `max e^{beta p0/8 + m g beta x3/(16c)} |f|` over the grid and species.
pub fn weighted_norm(bg: &Background, grid: &PhaseGrid, f: &[Vec<f64>; 2]) -> f64 {
    let mut m = 0.0f64;
    for (k, fk) in f.iter().enumerate() {
        for (idx, v) in fk.iter().enumerate() {
            if *v != 0.0 {
                let (x3, r, p3) = grid.node(idx);
                m = m.max(decay_weight(bg, k, x3, r, p3) * v.abs());
            }
        }
    }
    m
}

/// Charge density `sum q int f dp` at every height.
pub fn density(bg: &Background, grid: &PhaseGrid, f: &[Vec<f64>; 2]) -> Vec<f64> {
    moment(bg, grid, f, |_, _, _| 1.0)
}

/// Vertical flux `sum q int v3 f dp` at every height.
pub fn flux(bg: &Background, grid: &PhaseGrid, f: &[Vec<f64>; 2]) -> Vec<f64> {
    let c = bg.world.c;
    moment(bg, grid, f, move |mc, r, p3| c * p3 / (mc * mc + r * r + p3 * p3).sqrt())
}

fn moment(bg: &Background, grid: &PhaseGrid, f: &[Vec<f64>; 2], weight: impl Fn(f64, f64, f64) -> f64 + Sync) -> Vec<f64> {
    let (nx, nr, np) = grid.dims();
    (0..nx)
        .into_par_iter()
        .map(|i| {
            let mut total = 0.0;
            for (k, fk) in f.iter().enumerate() {
                let sp = bg.species(k);
                let mc = sp.mass * bg.world.c;
                let mut acc = 0.0;
                for j in 0..nr {
                    let r = grid.r.nodes[j];
                    let mut inner = 0.0;
                    for l in 0..np {
                        let v = fk[(i * nr + j) * np + l];
                        if v != 0.0 {
                            inner += grid.p3.weights[l] * weight(mc, r, grid.p3.nodes[l]) * v;
                        }
                    }
                    acc += grid.r.weights[j] * r * inner;
                }
                total += sp.charge * 2.0 * PI * acc;
            }
            total
        })
        .collect()
}

/// Potential of a perturbation density; the tail past the grid is modelled
/// with the height decay rate `nu`, fitted to the sampled profile.
pub fn potential_of(x3: &[f64], varrho: &[f64], nu: f64) -> Result<SlabPotential> {
    let amp = x3.iter().zip(varrho).fold(0.0f64, |m, (x, v)| m.max(v.abs() * (nu * x).exp()));
    let cert = (amp > 0.0).then_some(DecayCertificate { amplitude: amp, rate: nu });
    solve_slab(&SlabProfile::new(x3.to_vec(), varrho.to_vec(), cert)?)
}

/// Slab field used for one stage: `phi_h + sum a_i psi_i`.
#[derive(Clone, Debug)]
struct StageField {
    phi_h: Arc<SlabPotential>,
    psi: Vec<(Arc<SlabPotential>, f64)>,
}

impl StageField {
    #[inline]
    fn grads(&self, x3: f64) -> (f64, f64) {
        let d_h = self.phi_h.derivative(x3);
        let mut d_psi = 0.0;
        for (p, a) in &self.psi {
            d_psi += a * p.derivative(x3);
        }
        (d_h + d_psi, d_psi)
    }

    fn grad_sup(&self) -> (f64, f64) {
        // evaluate on the union of nodes plus midpoints; all parts are
        // piecewise cubic on nested grids
        let mut xs: Vec<f64> = self.phi_h.nodes().to_vec();
        for (p, _) in &self.psi {
            xs.extend_from_slice(p.nodes());
        }
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut pts = xs.clone();
        for w in xs.windows(2) {
            for k in 1..4 {
                pts.push(w[0] + (w[1] - w[0]) * k as f64 / 4.0);
            }
        }
        let (mut tot, mut psi) = (0.0f64, 0.0f64);
        for x in pts {
            let (a, b) = self.grads(x);
            tot = tot.max(a.abs());
            psi = psi.max(b.abs());
        }
        (tot, psi)
    }
}

struct Stepper<'a> {
    bg: &'a Background,
    grid: &'a PhaseGrid,
    cfg: &'a EvolveConfig,
    /// Interpolation weight exponent: nodes store `e^{kappa E} f`.
    kappa: f64,
}

impl<'a> Stepper<'a> {
    fn weighted(&self, k: usize, f: &[f64]) -> Vec<f64> {
        f.par_iter()
            .enumerate()
            .map(|(idx, v)| {
                if *v == 0.0 {
                    return 0.0;
                }
                let (x3, r, p3) = self.grid.node(idx);
                v * (self.kappa * self.bg.energy(k, x3, r, p3)).exp()
            })
            .collect()
    }

    // value of the previous perturbation at an off-grid point
    fn interpolate(&self, k: usize, u: &[f64], x3: f64, r: f64, p3: f64) -> f64 {
        let g = self.grid;
        let Some((si, wi)) = stencil(&g.x3, x3, 0.0, g.x_top()) else { return 0.0 };
        let Some((sj, wj)) = stencil(&g.r.nodes, r, 0.0, g.r_top()) else { return 0.0 };
        let Some((sl, wl)) = stencil(&g.p3.nodes, p3, -g.p_top(), g.p_top()) else { return 0.0 };
        let (_, nr, np) = g.dims();
        let mut acc = 0.0;
        for (a, wa) in wi.iter().enumerate() {
            for (b, wb) in wj.iter().enumerate() {
                let base = ((si + a) * nr + sj + b) * np + sl;
                let row = wl[0] * u[base] + wl[1] * u[base + 1] + wl[2] * u[base + 2] + wl[3] * u[base + 3];
                acc += wa * wb * row;
            }
        }
        if acc == 0.0 {
            return 0.0;
        }
        let mut f = acc * (-self.kappa * self.bg.energy(k, x3, r, p3)).exp();
        if self.cfg.clip {
            let h = self.bg.h(k, x3, r, p3);
            if f < -h {
                f = -h;
            }
        }
        f
    }

    /// Backward trace of one node over `dt` in `field`, with the forcing
    /// integral carried as a third component.
    fn node_value(&self, k: usize, u: &[f64], field: &StageField, forcing: bool, x3: f64, r: f64, p3: f64) -> Result<f64> {
        let bg = self.bg;
        let sp = bg.species(k);
        let w = &bg.world;
        let mc = sp.mass * w.c;
        let (q, mg, c) = (sp.charge, sp.mass * w.g, w.c);
        let mut rhs = |_s: f64, y: &[f64; 3]| {
            let p0 = (mc * mc + r * r + y[1] * y[1]).sqrt();
            let (d_tot, d_psi) = field.grads(y[0]);
            let src = if forcing && d_psi != 0.0 { q * d_psi * bg.dh_dp3(k, y[0], r, y[1]) } else { 0.0 };
            [c * y[1] / p0, -q * d_tot - mg, src]
        };
        let opts = Options { unchecked_from: 2, ..Options::new(self.cfg.tol, self.cfg.dt) };
        let ev = Event { index: 0, sign: 1.0, tol: 1e-13 };
        let mut remaining = self.cfg.dt;
        let mut state = [x3, p3, 0.0];
        let mut weight = 1.0;
        let mut total = 0.0;
        // on the wall an incoming node takes the boundary value directly
        if x3 == 0.0 && p3 > 0.0 {
            if w.epsilon == 0.0 {
                return Ok(0.0);
            }
            weight = w.epsilon;
            state[1] = -p3;
        }
        for _ in 0..1000 {
            let end = ode::solve(&mut rhs, 0.0, state, -remaining, &opts, Some(ev), &mut |_, _| {})?;
            // forcing integral over the traced piece, forward in time
            total -= weight * end.y[2];
            if !end.event {
                total += weight * self.interpolate(k, u, end.y[0], r, end.y[1]);
                return Ok(total);
            }
            remaining += end.s;
            if w.epsilon == 0.0 || remaining <= 0.0 {
                return Ok(total);
            }
            weight *= w.epsilon;
            state = [0.0, -end.y[1].abs(), 0.0];
        }
        Err(Error::BounceLimit(1000))
    }

    fn advance(&self, f: &[Vec<f64>; 2], field: &StageField, forcing: bool) -> Result<[Vec<f64>; 2]> {
        let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for k in 0..2 {
            if self.bg.boundary[k].is_zero() && f[k].iter().all(|v| *v == 0.0) && !forcing {
                out[k] = vec![0.0; self.grid.len()];
                continue;
            }
            let u = self.weighted(k, &f[k]);
            out[k] = (0..self.grid.len())
                .into_par_iter()
                .map(|idx| {
                    let (x3, r, p3) = self.grid.node(idx);
                    self.node_value(k, &u, field, forcing, x3, r, p3)
                })
                .collect::<Result<_>>()?;
        }
        Ok(out)
    }
}

/// Checks that the initial data match the boundary rule on the wall.
pub fn check_compatibility(bg: &Background, grid: &PhaseGrid, init: &InitialData) -> Result<()> {
    let eps = bg.world.epsilon;
    for k in 0..2 {
        let sp = bg.species(k);
        for &r in &grid.r.nodes {
            for &p3 in grid.p3.nodes.iter().filter(|p| **p > 0.0) {
                let inc = (init.f0)(sp, 0.0, r, p3);
                let out = (init.f0)(sp, 0.0, r, -p3);
                let scale = inc.abs().max(out.abs()).max(1e-300);
                if (inc - eps * out).abs() > 1e-12 * scale.max(1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "initial data violate the wall condition at r = {r}, p3 = {p3}: {inc:e} vs {:e}",
                        eps * out
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Size gates on the initial and boundary data of a perturbation run:
/// the weighted size `M` and the weighted gradient size `L`, sampled on the
/// grid nodes with the initial field `phi_h + psi(0)`. Velocity gradients
/// use `dp/dv = gamma m (I + gamma^2 v v^T / c^2)`.
pub fn dynamic_gates(bg: &Background, grid: &PhaseGrid, init: &InitialData) -> Result<Vec<Check>> {
    let w = &bg.world;
    let f0: [Vec<f64>; 2] = [0, 1].map(|k| {
        let sp = bg.species(k);
        (0..grid.len()).map(|idx| {
            let (x3, r, p3) = grid.node(idx);
            (init.f0)(sp, x3, r, p3)
        }).collect()
    });
    let nu = derived_constants(w, &bg.species).nu;
    let psi0 = potential_of(&grid.x3, &density(bg, grid, &f0), nu)?;
    let (mut m_size, mut l_size) = (0.0, 0.0);
    for k in 0..2 {
        let sp = bg.species(k);
        let mc = sp.mass * w.c;
        let full = |x3: f64, r: f64, p3: f64| bg.h(k, x3, r, p3) + (init.f0)(sp, x3, r, p3);
        let log_w = |x3: f64, r: f64, p3: f64| bg.energy(k, x3, r, p3) + sp.charge * psi0.value(x3) / w.c;
        let (sup_f, sup_grad) = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let (x3, r, p3) = grid.node(idx);
                let e = log_w(x3, r, p3);
                let d = 1e-6 * (1.0 + x3.max(r).max(p3.abs()));
                let dx = if x3 > d { (full(x3 + d, r, p3) - full(x3 - d, r, p3)) / (2.0 * d) } else { (full(x3 + d, r, p3) - full(x3, r, p3)) / d };
                let dr = if r > d { (full(x3, r + d, p3) - full(x3, r - d, p3)) / (2.0 * d) } else { 0.0 };
                let dp = (full(x3, r, p3 + d) - full(x3, r, p3 - d)) / (2.0 * d);
                let pn = (r * r + p3 * p3).sqrt();
                let (along, across) = if pn > 0.0 { ((dr * r + dp * p3) / pn, (dr * p3 - dp * r) / pn) } else { (0.0, dr.hypot(dp)) };
                let gamma = (mc * mc + pn * pn).sqrt() / mc;
                let dv = (gamma.powi(3) * sp.mass * along).hypot(gamma * sp.mass * across);
                ((w.beta * e).exp() * full(x3, r, p3).abs(), (w.beta_tilde * e).exp() * dx.hypot(dv))
            })
            .reduce(|| (0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        let spec = &bg.boundary[k];
        let mut sup_dg = 0.0f64;
        for &r in &grid.r.nodes {
            for &p3 in grid.p3.nodes.iter().filter(|p| **p > 0.0) {
                let d = 1e-6 * (1.0 + r.max(p3));
                let g = |r: f64, p3: f64| spec.profile_slab(sp, w, r, p3);
                let dr = if r > d { (g(r + d, p3) - g(r - d, p3)) / (2.0 * d) } else { 0.0 };
                let dp = if p3 > d { (g(r, p3 + d) - g(r, p3 - d)) / (2.0 * d) } else { (g(r, p3 + d) - g(r, p3)) / d };
                let p0 = (mc * mc + r * r + p3 * p3).sqrt();
                sup_dg = sup_dg.max((w.beta * p0).exp() * dr.hypot(dp));
            }
        }
        m_size += 2.0 * (sup_f + spec.weighted_sup(sp, w, w.beta));
        l_size += sup_grad + sup_dg;
    }
    let heavy = bg.species.plus.mass.max(bg.species.minus.mass);
    let (b, bt, g) = (w.beta, w.beta_tilde, w.g);
    let m_bound = b * (-heavy * g * b / 24.0).exp();
    let l_bound = (bt * (-heavy * g * bt / 24.0).exp()).min(b * b * (-heavy * g * b / 48.0).exp() / 1024.0);
    Ok(vec![
        Check::upper("initial data size M", m_size, m_bound, "dynamic smallness condition on the weighted data"),
        Check::upper("initial gradient size L", l_size, l_bound, "dynamic smallness condition on the weighted data gradients"),
    ])
}

/// Evolves the perturbation from `init` over `[0, t_end]`.
pub fn evolve(bg: &Background, init: &InitialData, cfg: &EvolveConfig) -> Result<Evolution> {
    bg.world.validate()?;
    if !(cfg.dt > 0.0 && cfg.t_end >= 0.0 && cfg.tol > 0.0) {
        return Err(Error::InvalidParameter("dt and tol must be > 0, t_end >= 0".into()));
    }
    let grid = &cfg.grid;
    let dx = grid.x3.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let cfl = bg.world.c * cfg.dt / dx;
    if cfl > cfg.cfl_limit {
        return Err(Error::Cfl(format!("c dt / dx3 = {cfl:.3} exceeds {}", cfg.cfl_limit)));
    }
    check_compatibility(bg, grid, init)?;
    let nu = derived_constants(&bg.world, &bg.species).nu;
    let bound = admissible_gradient_bound(&bg.world, &bg.species);
    let stepper = Stepper { bg, grid, cfg, kappa: 0.5 * bg.world.beta };

    let mut f: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (k, fk) in f.iter_mut().enumerate() {
        let sp = bg.species(k);
        *fk = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let (x3, r, p3) = grid.node(idx);
                (init.f0)(sp, x3, r, p3)
            })
            .collect();
    }
    let zero = Arc::new(SlabPotential::zero());
    let state_of = |t: f64, f: [Vec<f64>; 2]| -> Result<PerturbationState> {
        let varrho = if cfg.self_consistent { density(bg, grid, &f) } else { vec![0.0; grid.x3.len()] };
        let psi = if cfg.self_consistent { Arc::new(potential_of(&grid.x3, &varrho, nu)?) } else { zero.clone() };
        let norm = weighted_norm(bg, grid, &f);
        Ok(PerturbationState { t, f, varrho, psi, norm })
    };
    let moments_of = |s: &PerturbationState| Moments { t: s.t, varrho: density(bg, grid, &s.f), flux: flux(bg, grid, &s.f) };
    let ledger_of = |s: &PerturbationState| -> Result<LedgerEntry> {
        let field = StageField { phi_h: bg.phi_h.clone(), psi: vec![(s.psi.clone(), 1.0)] };
        let (tot, psi) = field.grad_sup();
        if cfg.self_consistent && tot > bound {
            return Err(Error::Inadmissible { measured: tot, bound });
        }
        Ok(LedgerEntry { t: s.t, norm: s.norm, psi_grad_sup: psi, total_grad_sup: tot })
    };

    let mut state = state_of(0.0, f)?;
    let mut ledger = vec![ledger_of(&state)?];
    let mut moments = vec![moments_of(&state)];
    let mut snapshots = Vec::new();
    if cfg.snapshot_every > 0 {
        snapshots.push(state.clone());
    }
    let steps = cfg.steps();
    for n in 0..steps {
        let t1 = (n + 1) as f64 * cfg.dt;
        let next = if cfg.self_consistent {
            let frozen = StageField { phi_h: bg.phi_h.clone(), psi: vec![(state.psi.clone(), 1.0)] };
            let predicted = stepper.advance(&state.f, &frozen, true)?;
            let rho_star = density(bg, grid, &predicted);
            let psi_star = Arc::new(potential_of(&grid.x3, &rho_star, nu)?);
            let centred = StageField { phi_h: bg.phi_h.clone(), psi: vec![(state.psi.clone(), 0.5), (psi_star, 0.5)] };
            stepper.advance(&state.f, &centred, true)?
        } else {
            let frozen = StageField { phi_h: bg.phi_h.clone(), psi: Vec::new() };
            stepper.advance(&state.f, &frozen, false)?
        };
        state = state_of(t1, next)?;
        ledger.push(ledger_of(&state)?);
        moments.push(moments_of(&state));
        if cfg.snapshot_every > 0 && (n + 1) % cfg.snapshot_every == 0 {
            snapshots.push(state.clone());
        }
    }
    Ok(Evolution { x3: grid.x3.clone(), ledger, moments, snapshots, last: state, cfl })
}

// three-point derivative on a nonuniform grid, one-sided at the ends
fn derivative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let i0 = k.saturating_sub(1).min(n - 3);
            let (xa, xb, xc) = (x[i0], x[i0 + 1], x[i0 + 2]);
            let t = x[k];
            y[i0] * ((t - xb) + (t - xc)) / ((xa - xb) * (xa - xc))
                + y[i0 + 1] * ((t - xa) + (t - xc)) / ((xb - xa) * (xb - xc))
                + y[i0 + 2] * ((t - xa) + (t - xb)) / ((xc - xa) * (xc - xb))
        })
        .collect()
}

/// `max_x |d_t varrho + d_3 b3|` at every interior time, with centred time
/// differences.
pub fn continuity_residual(x3: &[f64], series: &[Moments]) -> Result<Vec<(f64, f64)>> {
    if series.len() < 3 || x3.len() < 3 {
        return Err(Error::InvalidParameter("need at least 3 states and 3 heights".into()));
    }
    let mut out = Vec::with_capacity(series.len() - 2);
    for w in series.windows(3) {
        let dt = w[2].t - w[0].t;
        let db = derivative(x3, &w[1].flux);
        let r = (0..x3.len()).fold(0.0f64, |m, i| m.max(((w[2].varrho[i] - w[0].varrho[i]) / dt + db[i]).abs()));
        out.push((w[1].t, r));
    }
    Ok(out)
}

/// Time derivative of the slab potential implied by the flux:
/// `d_t psi(x3) = int_0^{x3} b3`, by the trapezoid rule.
pub fn potential_rate_from_flux(x3: &[f64], flux: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x3.len()];
    for i in 1..x3.len() {
        out[i] = out[i - 1] + 0.5 * (x3[i] - x3[i - 1]) * (flux[i] + flux[i - 1]);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    /// Least-squares decay rate of `log norm` over the second half.
    pub rate: f64,
    pub lambda: f64,
    /// `sup e^{lambda t} norm(t) / norm(0)`.
    pub envelope_ratio: f64,
    pub envelope_pass: bool,
    pub rate_pass: bool,
}

/// Fits the decay of a ledger and checks the exponential envelope.
pub fn decay_fit(ledger: &[(f64, f64)], lambda: f64) -> Result<DecayFit> {
    if ledger.len() < 3 {
        return Err(Error::DecayFit("need at least 3 entries".into()));
    }
    if let Some((t, n)) = ledger.iter().find(|(_, n)| !(*n > 0.0)) {
        return Err(Error::DecayFit(format!("non-positive norm {n:e} at t = {t}")));
    }
    let (t0, n0) = ledger[0];
    let span = ledger.last().unwrap().0 - t0;
    if span < 3.0 / lambda * (1.0 - 1e-9) {
        return Err(Error::DecayFit(format!("ledger spans {span}, less than 3/lambda = {}", 3.0 / lambda)));
    }
    let rate = tail_rate(ledger).ok_or_else(|| Error::DecayFit("tail half has fewer than 2 entries".into()))?;
    let envelope_ratio = ledger.iter().fold(0.0f64, |m, (t, n)| m.max((lambda * (t - t0)).exp() * n / n0));
    Ok(DecayFit { rate, lambda, envelope_ratio, envelope_pass: envelope_ratio <= 3.0, rate_pass: rate >= lambda })
}

/// Least-squares slope of `-log norm` against `t` over the second half of
/// the time span.
pub fn tail_rate(ledger: &[(f64, f64)]) -> Option<f64> {
    let t0 = ledger.first()?.0;
    let t1 = ledger.last()?.0;
    let mid = 0.5 * (t0 + t1);
    let pts: Vec<(f64, f64)> = ledger.iter().filter(|(t, n)| *t >= mid && *n > 0.0).map(|(t, n)| (*t, n.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// Checks the energy balance of one backward step in a field that varies
/// linearly in time from `psi0` to `psi1`: the change of
/// `p0 + (q (phi_h + psi) + m g X3)/c` must equal `(q/c) int d_t psi ds`.
/// Returns the absolute mismatch.
#[allow(clippy::too_many_arguments)]
pub fn energy_balance_residual(bg: &Background, k: usize, psi0: &SlabPotential, psi1: &SlabPotential, dt: f64, x3: f64, r: f64, p3: f64, tol: f64) -> Result<f64> {
    let sp = bg.species(k);
    let w = &bg.world;
    let mc = sp.mass * w.c;
    let (q, mg, c) = (sp.charge, sp.mass * w.g, w.c);
    // time runs from 0 (psi0) to dt (psi1); the trace starts at dt
    let psi = |t: f64, x: f64| -> (f64, f64, f64) {
        let a = t / dt;
        let (v0, d0) = psi0.eval(x);
        let (v1, d1) = psi1.eval(x);
        ((1.0 - a) * v0 + a * v1, (1.0 - a) * d0 + a * d1, (v1 - v0) / dt)
    };
    let mut rhs = |t: f64, y: &[f64; 3]| {
        let p0 = (mc * mc + r * r + y[1] * y[1]).sqrt();
        let (_, dpsi, rate) = psi(t, y[0]);
        [c * y[1] / p0, -q * (bg.phi_h.derivative(y[0]) + dpsi) - mg, q / c * rate]
    };
    let energy = |t: f64, x: f64, p: f64| {
        (mc * mc + r * r + p * p).sqrt() + (q * (bg.phi_h.value(x) + psi(t, x).0) + mg * x) / c
    };
    let opts = Options::new(tol, 0.1 * dt);
    let end = ode::solve(&mut rhs, dt, [x3, p3, 0.0], -dt, &opts, None, &mut |_, _| {})?;
    let change = energy(dt, x3, p3) - energy(end.s, end.y[0], end.y[1]);
    // y[2] integrates backward, so it holds minus the forward integral
    Ok((change + end.y[2]).abs())
}

/// `amplitude (1 - e^{-wall_scale x3}) e^{-beta (p0 + m g x3/c)/2}`: smooth,
/// zero on the wall, and inside the small-data class for small amplitude.
pub fn wall_vanishing_data(world: World, amplitude: f64, wall_scale: f64) -> InitialData {
    InitialData {
        f0: Arc::new(move |sp: &Species, x3, r, p3| {
            let mc = sp.mass * world.c;
            let e = (mc * mc + r * r + p3 * p3).sqrt() + sp.mass * world.g * x3 / world.c;
            amplitude * (1.0 - (-wall_scale * x3).exp()) * (-0.5 * world.beta * e).exp()
        }),
        weighted_bound: Some(amplitude.abs()),
    }
}

/// Grid sized for a decay run up to `t_end`: `p3` reaches `m_hat g t_end / 4`
/// so trajectories still in flight over the second half are resolved, and
/// heights reach 1.2 times the apex of the fastest of them.
pub fn decay_grid(bg: &Background, t_end: f64, nx: usize, nr: usize, np: usize) -> Result<PhaseGrid> {
    let w = &bg.world;
    let m_hat = bg.species.m_hat();
    let p_top = m_hat * w.g * t_end / 4.0;
    let x_top = 1.2 * w.c * p_top / (m_hat * w.g);
    let breaks = PhaseGrid::graded_breaks(1.0 / w.beta, p_top, np / 8);
    PhaseGrid::new(x_top, nx, 30.0 / w.beta, nr, &breaks, 4)
}
