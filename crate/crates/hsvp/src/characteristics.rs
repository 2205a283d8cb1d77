//! Relativistic characteristics in a potential snapshot with gravity and a
//! vertical magnetic field: tracing, exit data, bounce chains and the
//! trajectory bounds as checkable predicates.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::FieldSnapshot;
use crate::ode::{self, Event, Options};
use crate::physcore::{characteristic_energy, dot, kinetic_distance, reflect, total_energy, velocity, PhaseState, Species, Vec3, World};

/// Relative position tolerance of located wall crossings.
pub const POSITION_TOL: f64 = 1e-12;
/// Samples with `|v_b3| < GRAZING_FRACTION * c` are rejected by the
/// sensitivity check.
pub const GRAZING_FRACTION: f64 = 1e-3;
/// Default horizon as a multiple of the exit-time bound.
pub const HORIZON_FACTOR: f64 = 1.25;

#[inline]
fn pack(x: &Vec3, p: &Vec3) -> [f64; 6] {
    [x[0], x[1], x[2], p[0], p[1], p[2]]
}

#[inline]
fn unpack(y: &[f64; 6]) -> (Vec3, Vec3) {
    ([y[0], y[1], y[2]], [y[3], y[4], y[5]])
}

/// Force `q (v x B / c - grad phi) - m g e3` at `(t, x, p)`.
#[inline]
pub fn force(field: &FieldSnapshot, sp: &Species, w: &World, t: f64, x: &Vec3, p: &Vec3) -> Vec3 {
    let v = velocity(sp, w, p);
    let grad = field.gradient(t, x);
    let q = sp.charge;
    let b = w.b3 / w.c;
    [
        q * (v[1] * b - grad[0]),
        q * (-v[0] * b - grad[1]),
        -q * grad[2] - sp.mass * w.g,
    ]
}

fn rhs<'a>(field: &'a FieldSnapshot, sp: &'a Species, w: &'a World) -> impl FnMut(f64, &[f64; 6]) -> [f64; 6] + 'a {
    move |t, y| {
        let (x, p) = unpack(y);
        let v = velocity(sp, w, &p);
        let f = force(field, sp, w, t, &x, &p);
        [v[0], v[1], v[2], f[0], f[1], f[2]]
    }
}

fn first_step(sp: &Species, w: &World, p: &Vec3, tol: f64) -> f64 {
    let scale = total_energy(sp, w, p) / (sp.mass * w.g);
    0.1 * scale * tol.powf(0.2).max(1e-3)
}

/// Bound on the backward (or forward) exit time for a static admissible
/// field: `(4/(m g)) (p0 + 3 m g x3 / (2c))`.
pub fn exit_time_bound(sp: &Species, w: &World, x3: f64, p: &Vec3) -> f64 {
    4.0 / (sp.mass * w.g) * (total_energy(sp, w, p) + 1.5 * sp.mass * w.g * x3 / w.c)
}

/// Exit-time bound for time-dependent fields, mirror of the static one with
/// the explicit constants of the dynamic estimate.
pub fn dynamic_exit_time_bound(sp: &Species, w: &World, x3: f64, p: &Vec3, backward: bool) -> f64 {
    let (m, c, g) = (sp.mass, w.c, w.g);
    let p0 = total_energy(sp, w, p);
    let s = if backward { -p[2] } else { p[2] };
    let k = (g / (4.0 * 2f64.sqrt())).min(c / 10f64.sqrt());
    let inner = 2.0 * c / (m * g) * (p0 - m * c + 1.5 * m * g * x3 / c + s);
    x3.max(inner) / k + 4.0 / (m * g) * dot(p, p).sqrt() + 1.0
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Sample {
    pub s: f64,
    pub x: Vec3,
    pub p: Vec3,
    pub energy: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub accepted: usize,
    pub rejected: usize,
    pub hit_wall: bool,
}

impl Trajectory {
    /// `max |E(s) - E(0)| / |E(0)|`.
    pub fn energy_drift(&self) -> f64 {
        let Some(first) = self.samples.first() else { return 0.0 };
        self.samples.iter().fold(0.0f64, |m, s| m.max((s.energy - first.energy).abs() / first.energy.abs()))
    }

    /// `max | |P_par(s)| - |P_par(0)| | / max(|P_par(0)|, 1)`.
    pub fn horizontal_momentum_drift(&self) -> f64 {
        let Some(first) = self.samples.first() else { return 0.0 };
        let r0 = first.p[0].hypot(first.p[1]);
        self.samples
            .iter()
            .fold(0.0f64, |m, s| m.max((s.p[0].hypot(s.p[1]) - r0).abs() / r0.max(1.0)))
    }

    /// CSV with columns `s, X1, X2, X3, P1, P2, P3, energy`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "s,X1,X2,X3,P1,P2,P3,energy")?;
        for s in &self.samples {
            writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                s.s, s.x[0], s.x[1], s.x[2], s.p[0], s.p[1], s.p[2], s.energy
            )?;
        }
        Ok(())
    }
}

/// Traces from `start` over the signed duration `span`, stopping early at a
/// wall crossing.
pub fn integrate(field: &FieldSnapshot, sp: &Species, w: &World, start: &PhaseState, span: f64, tol: f64) -> Result<Trajectory> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be > 0".into()));
    }
    if start.x[2] < 0.0 {
        return Err(Error::InvalidParameter("start below the wall".into()));
    }
    let t0 = field.start_time();
    let mut traj = Trajectory::default();
    let mut f = rhs(field, sp, w);
    let ev = Event { index: 2, sign: 1.0, tol: POSITION_TOL };
    let opts = Options::new(tol, first_step(sp, w, &start.p, tol));
    let end = ode::solve(&mut f, t0, pack(&start.x, &start.p), span, &opts, Some(ev), &mut |s, y| {
        let (x, p) = unpack(y);
        let phi = field.potential(s, &x);
        traj.samples.push(Sample { s: s - t0, x, p, energy: characteristic_energy(sp, w, phi, x[2], &p) });
    })?;
    traj.accepted = end.accepted;
    traj.rejected = end.rejected;
    traj.hit_wall = end.event;
    Ok(traj)
}

/// Like [`integrate`] but without the wall event, returning the endpoint of
/// the flow map at exactly `s0 + span`. Needs a field defined slightly
/// below the wall.
pub fn flow_map(field: &FieldSnapshot, sp: &Species, w: &World, x: &Vec3, p: &Vec3, span: f64, tol: f64) -> Result<(Vec3, Vec3)> {
    let mut f = rhs(field, sp, w);
    let opts = Options::new(tol, first_step(sp, w, p, tol));
    let end = ode::solve(&mut f, field.start_time(), pack(x, p), span, &opts, None, &mut |_, _| {})?;
    Ok(unpack(&end.y))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Backward,
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Boundary,
    InitialTime,
    Horizon,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Bounce {
    /// Elapsed tracing time from the start point.
    pub time: f64,
    pub x: Vec3,
    /// Momentum on arrival at the wall.
    pub p_in: Vec3,
    /// Reflected momentum the chain continues from.
    pub p_out: Vec3,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExitRecord {
    pub t_exit: f64,
    pub x_exit: Vec3,
    pub p_exit: Vec3,
    pub direction: Direction,
    pub bounces: Vec<Bounce>,
    pub terminated_by: Termination,
}

fn exit(field: &FieldSnapshot, sp: &Species, w: &World, x: &Vec3, p: &Vec3, tol: f64, horizon: Option<f64>, dir: Direction) -> Result<ExitRecord> {
    if x[2] < 0.0 {
        return Err(Error::InvalidParameter("start below the wall".into()));
    }
    let sign = match dir {
        Direction::Backward => -1.0,
        Direction::Forward => 1.0,
    };
    // on the wall, a trace that immediately leaves the half space exits at once
    if x[2] == 0.0 && sign * p[2] <= 0.0 {
        return Ok(ExitRecord { t_exit: 0.0, x_exit: *x, p_exit: *p, direction: dir, bounces: vec![], terminated_by: Termination::Boundary });
    }
    let horizon = horizon.unwrap_or_else(|| {
        HORIZON_FACTOR
            * if field.is_static() {
                exit_time_bound(sp, w, x[2], p)
            } else {
                dynamic_exit_time_bound(sp, w, x[2], p, sign < 0.0)
            }
    });
    let t0 = field.start_time();
    let mut f = rhs(field, sp, w);
    let ev = Event { index: 2, sign: 1.0, tol: POSITION_TOL * (1.0 + x[2]) };
    let opts = Options::new(tol, first_step(sp, w, p, tol));
    let end = ode::solve(&mut f, t0, pack(x, p), sign * horizon, &opts, Some(ev), &mut |_, _| {})?;
    if !end.event {
        return Err(Error::ExitBoundViolated { horizon });
    }
    let (mut xe, pe) = unpack(&end.y);
    xe[2] = 0.0;
    Ok(ExitRecord { t_exit: (end.s - t0).abs(), x_exit: xe, p_exit: pe, direction: dir, bounces: vec![], terminated_by: Termination::Boundary })
}

/// Backward exit: first wall hit of the trace `s -> (X, P)(-s)`.
pub fn backward_exit(field: &FieldSnapshot, sp: &Species, w: &World, x: &Vec3, p: &Vec3, tol: f64, horizon: Option<f64>) -> Result<ExitRecord> {
    exit(field, sp, w, x, p, tol, horizon, Direction::Backward)
}

/// Forward exit, the mirror of [`backward_exit`].
pub fn forward_exit(field: &FieldSnapshot, sp: &Species, w: &World, x: &Vec3, p: &Vec3, tol: f64, horizon: Option<f64>) -> Result<ExitRecord> {
    exit(field, sp, w, x, p, tol, horizon, Direction::Forward)
}

/// Backward trace through specular reflections. Every wall hit is recorded;
/// the chain stops once `epsilon^k * scale` drops below `weight_tol`.
#[allow(clippy::too_many_arguments)]
pub fn specular_backward_chain(
    field: &FieldSnapshot,
    sp: &Species,
    w: &World,
    x: &Vec3,
    p: &Vec3,
    epsilon: f64,
    tol: f64,
    max_bounces: usize,
    weight_tol: f64,
    scale: f64,
) -> Result<ExitRecord> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    if max_bounces == 0 {
        return Err(Error::InvalidParameter("max_bounces must be >= 1".into()));
    }
    let first = backward_exit(field, sp, w, x, p, tol, None)?;
    let mut record = first.clone();
    let mut elapsed = first.t_exit;
    let mut hit = (first.x_exit, first.p_exit);
    let mut weight = 1.0;
    loop {
        let p_out = reflect(&hit.1);
        record.bounces.push(Bounce { time: elapsed, x: hit.0, p_in: hit.1, p_out });
        weight *= epsilon;
        if weight == 0.0 || weight * scale < weight_tol {
            return Ok(record);
        }
        if record.bounces.len() >= max_bounces {
            return Err(Error::BounceLimit(max_bounces));
        }
        let next = backward_exit(field, sp, w, &hit.0, &p_out, tol, None)?;
        elapsed += next.t_exit;
        hit = (next.x_exit, next.p_exit);
    }
}

/// Highest point of the full trajectory through `(x, p)` and the momentum
/// there. The vertical momentum decreases strictly in admissible fields, so
/// the apex is the unique zero of `P3`.
pub fn apex(field: &FieldSnapshot, sp: &Species, w: &World, x: &Vec3, p: &Vec3, tol: f64) -> Result<(f64, Vec3)> {
    if p[2] == 0.0 {
        return Ok((x[2], *p));
    }
    let (sign, ev_sign) = if p[2] > 0.0 { (1.0, 1.0) } else { (-1.0, -1.0) };
    let horizon = HORIZON_FACTOR * exit_time_bound(sp, w, x[2], p);
    let mut f = rhs(field, sp, w);
    let ev = Event { index: 5, sign: ev_sign, tol: 1e-13 * total_energy(sp, w, p) };
    let opts = Options::new(tol, first_step(sp, w, p, tol));
    let end = ode::solve(&mut f, field.start_time(), pack(x, p), sign * horizon, &opts, Some(ev), &mut |_, _| {})?;
    if !end.event {
        return Err(Error::ExitBoundViolated { horizon });
    }
    let (xa, pa) = unpack(&end.y);
    Ok((xa[2], pa))
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundViolation {
    pub sample: usize,
    pub check: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ExitBoundReport {
    pub checked: usize,
    pub violations: Vec<BoundViolation>,
    /// Largest `lhs / rhs` seen per check.
    pub worst_ratio: Vec<(&'static str, f64)>,
}

fn sample_checks(field: &FieldSnapshot, sp: &Species, w: &World, s: &PhaseState, tol: f64) -> Result<Vec<(&'static str, f64, f64)>> {
    let (m, g, c) = (sp.mass, w.g, w.c);
    let mc = m * c;
    let rec = backward_exit(field, sp, w, &s.x, &s.p, tol, None)?;
    let tb = rec.t_exit;
    let pb = rec.p_exit;
    let pb0 = total_energy(sp, w, &pb);
    let p0 = total_energy(sp, w, &s.p);
    let mut out = Vec::new();
    if field.is_static() {
        out.push(("exit time vs energy and height", tb, exit_time_bound(sp, w, s.x[2], &s.p)));
        out.push(("exit time vs exit momentum", tb, 4.0 / (m * g) * dot(&pb, &pb).sqrt()));
        let k = 2.0 / (m * g) + 8f64.sqrt() * pb0.sqrt() / (c * m.powi(3) * g * g).sqrt();
        out.push(("exit time vs vertical exit momentum", tb, k * pb[2].abs()));
        let (top, pa) = apex(field, sp, w, &s.x, &s.p, tol)?;
        out.push(("apex height vs vertical exit momentum", top, 2.0 * pb[2] * pb[2] / (m * m * g)));
        out.push(("apex height upper bound", top, 2.0 * c / (m * g) * (pb0 - mc)));
        // sandwich measured against the kinetic energy available at the apex
        let floor = (mc * mc + pa[0] * pa[0] + pa[1] * pa[1]).sqrt();
        let gap = pb0 - floor;
        if gap > 1e-9 * pb0 {
            out.push(("apex sandwich upper", top / gap, 2.0 * c / (m * g)));
            out.push(("apex sandwich lower", 2.0 * c / (3.0 * m * g), top / gap));
        }
    } else {
        out.push(("dynamic exit time vs exit energy", tb, 8.0 / (m * g) * pb0));
        out.push(("dynamic energy and height vs exit energy", p0 + m * g * s.x[2] / (2.0 * c), 7.0 / 6.0 * pb0));
    }
    Ok(out)
}

/// Evaluates the explicit exit-time and height inequalities on every sample.
/// Violations are data, not errors; tracing failures are errors.
pub fn exit_bound_report(field: &FieldSnapshot, sp: &Species, w: &World, samples: &[PhaseState], tol: f64) -> Result<ExitBoundReport> {
    let per: Vec<Result<Vec<(&'static str, f64, f64)>>> = samples.par_iter().map(|s| sample_checks(field, sp, w, s, tol)).collect();
    let mut report = ExitBoundReport { checked: samples.len(), ..Default::default() };
    for (i, r) in per.into_iter().enumerate() {
        for (name, lhs, rhs) in r? {
            let ratio = lhs / rhs;
            match report.worst_ratio.iter_mut().find(|(n, _)| *n == name) {
                Some(e) => e.1 = e.1.max(ratio),
                None => report.worst_ratio.push((name, ratio)),
            }
            if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
                report.violations.push(BoundViolation { sample: i, check: name, lhs, rhs });
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct SensitivityReport {
    pub t_exit: f64,
    pub v_exit3: f64,
    /// Max relative residual per identity: exit time, exit position, exit
    /// momentum.
    pub residual_time: f64,
    pub residual_position: f64,
    pub residual_momentum: f64,
    pub max_residual: f64,
}

fn rel_residual(fd: &[f64], id: &[f64]) -> f64 {
    let scale = fd.iter().chain(id).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale.max(1e-300);
    fd.iter().zip(id).fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / a.abs().max(b.abs()).max(floor)))
}

/// Compares central differences of the exit data with the identities that
/// express them through derivatives of the fixed-time flow map:
/// `d t_b = d X3(-t_b) / v_b3`, `d x_b = d X(-t_b) - v_b d t_b`,
/// `d p_b = d P(-t_b) - F_b d t_b`.
pub fn trajectory_sensitivity_check(field: &FieldSnapshot, sp: &Species, w: &World, x: &Vec3, p: &Vec3, h_fd: f64, tol: f64) -> Result<SensitivityReport> {
    if !field.is_static() {
        return Err(Error::InvalidParameter("sensitivity identities need a static field".into()));
    }
    if x[2] <= 2.0 * h_fd {
        return Err(Error::InvalidParameter("start too close to the wall for the stencil".into()));
    }
    // Every trace replays the step sequence of the unperturbed run, so the
    // difference quotients see a smooth numerical map instead of the jitter
    // of independently adapted step sizes.
    let t0 = field.start_time();
    let mut f = rhs(field, sp, w);
    let horizon = HORIZON_FACTOR * exit_time_bound(sp, w, x[2], p);
    let ev = Event { index: 2, sign: 1.0, tol: POSITION_TOL * (1.0 + x[2]) };
    let opts = Options::new(tol, first_step(sp, w, p, tol));
    let mut times = Vec::new();
    let end = ode::solve(&mut f, t0, pack(x, p), -horizon, &opts, Some(ev), &mut |s, _| times.push(s))?;
    if !end.event {
        return Err(Error::ExitBoundViolated { horizon });
    }
    let flow_steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    // The exit replay ends with a short step straddling the crossing, wide
    // enough to hold every perturbed crossing: the located state then moves
    // with the true vector field rather than with a long step's stage mix.
    // The window is centred on the crossing and may cut into earlier steps
    // when the last recorded step is only a sliver.
    let reach: f64 = flow_steps.iter().map(|h| h.abs()).sum();
    let vb3 = velocity(sp, w, &unpack(&end.y).1)[2].abs().max(GRAZING_FRACTION * w.c);
    let delta = (10.0 * h_fd * (1.0 + horizon) / vb3).min(0.5 * reach);
    let mut exit_steps = Vec::with_capacity(flow_steps.len() + 1);
    let mut covered = 0.0;
    for &h in &flow_steps {
        let room = reach - delta - covered;
        if room <= 0.0 {
            break;
        }
        let step = h.abs().min(room);
        exit_steps.push(-step);
        covered += step;
    }
    exit_steps.push(-2.0 * delta);
    // The flow to the base crossing shares every step but the last with the
    // exit replay, so both sides of the identity see the same numerical map.
    let mut flow_steps = exit_steps.clone();
    if let Some(last) = flow_steps.last_mut() {
        *last = -delta;
    }
    let replay_exit = |f: &mut dyn FnMut(f64, &[f64; 6]) -> [f64; 6], x: &Vec3, p: &Vec3| -> Result<(f64, Vec3, Vec3)> {
        let e = ode::replay(&mut |s, y: &[f64; 6]| f(s, y), t0, pack(x, p), &exit_steps, Some(ev), 8)?;
        let (mut xe, pe) = unpack(&e.y);
        xe[2] = 0.0;
        Ok((t0 - e.s, xe, pe))
    };
    let replay_flow = |f: &mut dyn FnMut(f64, &[f64; 6]) -> [f64; 6], x: &Vec3, p: &Vec3| -> Result<(Vec3, Vec3)> {
        let e = ode::replay(&mut |s, y: &[f64; 6]| f(s, y), t0, pack(x, p), &flow_steps, None, 0)?;
        Ok(unpack(&e.y))
    };
    let (tb, xb, pb) = replay_exit(&mut f, x, p)?;
    let vb = velocity(sp, w, &pb);
    if vb[2].abs() < GRAZING_FRACTION * w.c {
        return Err(Error::Grazing(vb[2].abs()));
    }
    let fb = force(field, sp, w, t0 - tb, &xb, &pb);
    let mut fd_t = [0.0; 6];
    let mut id_t = [0.0; 6];
    let mut fd_x = Vec::with_capacity(18);
    let mut id_x = Vec::with_capacity(18);
    let mut fd_p = Vec::with_capacity(18);
    let mut id_p = Vec::with_capacity(18);
    for k in 0..6 {
        let shift = |s: f64| {
            let mut z = pack(x, p);
            z[k] += s * h_fd;
            unpack(&z)
        };
        let (xp, pp) = shift(1.0);
        let (xm, pm) = shift(-1.0);
        let ep = replay_exit(&mut f, &xp, &pp)?;
        let em = replay_exit(&mut f, &xm, &pm)?;
        let (fxp, fpp) = replay_flow(&mut f, &xp, &pp)?;
        let (fxm, fpm) = replay_flow(&mut f, &xm, &pm)?;
        let dx: Vec3 = std::array::from_fn(|i| (fxp[i] - fxm[i]) / (2.0 * h_fd));
        let dp: Vec3 = std::array::from_fn(|i| (fpp[i] - fpm[i]) / (2.0 * h_fd));
        fd_t[k] = (ep.0 - em.0) / (2.0 * h_fd);
        id_t[k] = dx[2] / vb[2];
        for i in 0..3 {
            fd_x.push((ep.1[i] - em.1[i]) / (2.0 * h_fd));
            id_x.push(dx[i] - vb[i] * id_t[k]);
            fd_p.push((ep.2[i] - em.2[i]) / (2.0 * h_fd));
            id_p.push(dp[i] - fb[i] * id_t[k]);
        }
    }
    let rt = rel_residual(&fd_t, &id_t);
    // the vertical exit position is identically zero; skip it
    let pos: Vec<usize> = (0..18).filter(|i| i % 3 != 2).collect();
    let rx = rel_residual(&pos.iter().map(|&i| fd_x[i]).collect::<Vec<_>>(), &pos.iter().map(|&i| id_x[i]).collect::<Vec<_>>());
    let rp = rel_residual(&fd_p, &id_p);
    Ok(SensitivityReport { t_exit: tb, v_exit3: vb[2], residual_time: rt, residual_position: rx, residual_momentum: rp, max_residual: rt.max(rx).max(rp) })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeReport {
    pub rate: f64,
    pub samples: usize,
    /// Max over the trace of `log(alpha(s)/alpha(0)) / (rate |s|)` in absolute
    /// value; at most one when the envelope holds.
    pub worst_exponent_ratio: f64,
}

/// Checks that the kinetic distance along the backward trace stays within
/// `alpha(0) exp(+-K |s|)` with `K = 4g + sup|d3 d3 phi| + sup|grad_par d3 phi|`.
pub fn kinetic_distance_envelope(field: &FieldSnapshot, sp: &Species, w: &World, x: &Vec3, p: &Vec3, tol: f64) -> Result<EnvelopeReport> {
    let rate = 4.0 * w.g + field.d33_bound + field.dpar3_wall_bound;
    let t0 = field.start_time();
    let alpha = |s: f64, x: &Vec3, p: &Vec3| kinetic_distance(sp, w, field.wall_normal_derivative(s, &[x[0], x[1]]), x, p);
    let a0 = alpha(t0, x, p)?;
    let rec = backward_exit(field, sp, w, x, p, tol, None)?;
    let traj = integrate(field, sp, w, &PhaseState { x: *x, p: *p }, -rec.t_exit * (1.0 - 1e-9), tol)?;
    let mut worst = 0.0f64;
    for s in &traj.samples {
        if s.s == 0.0 {
            continue;
        }
        let a = alpha(t0 + s.s, &s.x, &s.p)?;
        worst = worst.max((a / a0).ln().abs() / (rate * s.s.abs()));
    }
    Ok(EnvelopeReport { rate, samples: traj.samples.len(), worst_exponent_ratio: worst })
}
