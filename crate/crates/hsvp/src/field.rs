//! Immutable potential snapshots queried by the characteristic tracer.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::physcore::{admissible_gradient_bound, SpeciesPair, Vec3, World};
use crate::poisson::SlabPotential;

/// A closed-form potential. Implementations must vanish on the wall.
pub trait AnalyticPotential: Send + Sync {
    fn value(&self, t: f64, x: &Vec3) -> f64;
    fn gradient(&self, t: f64, x: &Vec3) -> Vec3;
    fn time_derivative(&self, _t: f64, _x: &Vec3) -> f64 {
        0.0
    }
    fn is_static(&self) -> bool {
        true
    }
}

/// Time dependence of one slab component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeWeight {
    Const(f64),
    /// Linear interpolation of the weight from `w0` at `t0` to `w1` at `t1`.
    Linear { t0: f64, t1: f64, w0: f64, w1: f64 },
}

impl TimeWeight {
    #[inline]
    fn at(&self, t: f64) -> (f64, f64) {
        match *self {
            TimeWeight::Const(w) => (w, 0.0),
            TimeWeight::Linear { t0, t1, w0, w1 } => {
                let rate = (w1 - w0) / (t1 - t0);
                (w0 + rate * (t - t0), rate)
            }
        }
    }
}

/// Sum of weighted slab potentials, for example `phi_h + psi(t)`.
#[derive(Clone, Debug)]
pub struct SlabField {
    pub parts: Vec<(Arc<SlabPotential>, TimeWeight)>,
}

impl SlabField {
    /// `(phi, d phi / d x3, d phi / d t)` at `(t, x3)`.
    #[inline]
    pub fn eval(&self, t: f64, x3: f64) -> (f64, f64, f64) {
        let mut out = (0.0, 0.0, 0.0);
        for (p, w) in &self.parts {
            let (wv, wr) = w.at(t);
            let (v, d) = p.eval(x3);
            out.0 += wv * v;
            out.1 += wv * d;
            out.2 += wr * v;
        }
        out
    }
}

/// Axially symmetric potential tabulated on an `(R, x3)` grid with
/// bilinear interpolation of value and gradient.
#[derive(Clone, Debug)]
pub struct AxisymmetricGrid {
    pub radii: Vec<f64>,
    pub heights: Vec<f64>,
    /// Row-major in `(radius, height)`.
    pub phi: Vec<f64>,
    pub d_radial: Vec<f64>,
    pub d_vertical: Vec<f64>,
}

impl AxisymmetricGrid {
    fn locate(nodes: &[f64], v: f64) -> (usize, f64) {
        let n = nodes.len();
        if v <= nodes[0] {
            return (0, 0.0);
        }
        if v >= nodes[n - 1] {
            return (n - 2, 1.0);
        }
        let i = nodes.partition_point(|&a| a <= v).saturating_sub(1).min(n - 2);
        (i, (v - nodes[i]) / (nodes[i + 1] - nodes[i]))
    }

    fn bilinear(&self, table: &[f64], r: f64, z: f64) -> f64 {
        let nz = self.heights.len();
        let (i, a) = Self::locate(&self.radii, r);
        let (j, b) = Self::locate(&self.heights, z);
        let at = |ii: usize, jj: usize| table[ii * nz + jj];
        (1.0 - a) * ((1.0 - b) * at(i, j) + b * at(i, j + 1)) + a * ((1.0 - b) * at(i + 1, j) + b * at(i + 1, j + 1))
    }

    // Below the wall both slopes follow the first cell's linear profile for
    // one cell, then stay constant. Returns the vertical slope at `z` and
    // the potential there.
    fn below(&self, r: f64, z: f64) -> (f64, f64) {
        let h = self.heights[1] - self.heights[0];
        let d0 = self.bilinear(&self.d_vertical, r, self.heights[0]);
        let d1 = self.bilinear(&self.d_vertical, r, self.heights[1]);
        let s = (d1 - d0) / h;
        let zc = z.max(-h);
        let slope = d0 + s * zc;
        let value = d0 * zc + 0.5 * s * zc * zc + slope * (z - zc);
        (slope, value)
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        if x[2] <= 0.0 {
            return self.below(x[0].hypot(x[1]), x[2]).1;
        }
        self.bilinear(&self.phi, x[0].hypot(x[1]), x[2])
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        let r = x[0].hypot(x[1]);
        let z = x[2].max(0.0);
        let dr = if x[2] < 0.0 {
            let h = self.heights[1] - self.heights[0];
            let r0 = self.bilinear(&self.d_radial, r, self.heights[0]);
            let r1 = self.bilinear(&self.d_radial, r, self.heights[1]);
            r0 + (r1 - r0) * x[2].max(-h) / h
        } else {
            self.bilinear(&self.d_radial, r, z)
        };
        let dz = if x[2] < 0.0 { self.below(r, x[2]).0 } else { self.bilinear(&self.d_vertical, r, z) };
        if r == 0.0 {
            return [0.0, 0.0, dz];
        }
        [dr * x[0] / r, dr * x[1] / r, dz]
    }
}

#[derive(Clone)]
pub enum FieldMode {
    Zero,
    Analytic(Arc<dyn AnalyticPotential>),
    Slab(SlabField),
    Sampled3D(Arc<AxisymmetricGrid>),
}

impl fmt::Debug for FieldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldMode::Zero => write!(f, "Zero"),
            FieldMode::Analytic(_) => write!(f, "Analytic"),
            FieldMode::Slab(s) => write!(f, "Slab({} parts)", s.parts.len()),
            FieldMode::Sampled3D(_) => write!(f, "Sampled3D"),
        }
    }
}

/// A potential snapshot with the sup-norms the trajectory bounds need.
#[derive(Clone, Debug)]
pub struct FieldSnapshot {
    pub mode: FieldMode,
    pub time: Option<f64>,
    /// Declared `sup |grad phi|`.
    pub grad_bound: f64,
    /// Declared `sup |d3 d3 phi|`.
    pub d33_bound: f64,
    /// Declared `sup |grad_par d3 phi|` on the wall.
    pub dpar3_wall_bound: f64,
    admissible: bool,
}

impl FieldSnapshot {
    pub fn zero() -> Self {
        FieldSnapshot { mode: FieldMode::Zero, time: None, grad_bound: 0.0, d33_bound: 0.0, dpar3_wall_bound: 0.0, admissible: false }
    }

    pub fn slab(potential: Arc<SlabPotential>) -> Self {
        let grad_bound = potential.grad_sup();
        let d33_bound = potential.second_sup();
        FieldSnapshot {
            mode: FieldMode::Slab(SlabField { parts: vec![(potential, TimeWeight::Const(1.0))] }),
            time: None,
            grad_bound,
            d33_bound,
            dpar3_wall_bound: 0.0,
            admissible: false,
        }
    }

    /// General slab combination; bounds are summed over the parts using the
    /// largest weight magnitude on `[t_lo, t_hi]`.
    pub fn slab_field(field: SlabField, t_lo: f64, t_hi: f64) -> Self {
        let (mut g, mut d) = (0.0, 0.0);
        for (p, w) in &field.parts {
            let a = w.at(t_lo).0.abs().max(w.at(t_hi).0.abs());
            g += a * p.grad_sup();
            d += a * p.second_sup();
        }
        FieldSnapshot { mode: FieldMode::Slab(field), time: Some(t_hi), grad_bound: g, d33_bound: d, dpar3_wall_bound: 0.0, admissible: false }
    }

    /// Wraps a closed-form potential; checks that it vanishes on the wall at
    /// a few points.
    pub fn analytic(f: Arc<dyn AnalyticPotential>, grad_bound: f64, d33_bound: f64, dpar3_wall_bound: f64) -> Result<Self> {
        for x in [[0.0, 0.0, 0.0], [1.3, -0.7, 0.0], [-25.0, 40.0, 0.0]] {
            let v = f.value(0.0, &x);
            if v != 0.0 {
                return Err(Error::InvalidParameter(format!("analytic potential is {v:e} on the wall")));
            }
        }
        Ok(FieldSnapshot { mode: FieldMode::Analytic(f), time: None, grad_bound, d33_bound, dpar3_wall_bound, admissible: false })
    }

    pub fn sampled(grid: Arc<AxisymmetricGrid>) -> Self {
        let grad_bound = grid
            .d_radial
            .iter()
            .zip(&grid.d_vertical)
            .fold(0.0f64, |m, (a, b)| m.max(a.hypot(*b)));
        FieldSnapshot { mode: FieldMode::Sampled3D(grid), time: None, grad_bound, d33_bound: 0.0, dpar3_wall_bound: 0.0, admissible: false }
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    /// Flags the snapshot admissible when the declared gradient bound obeys
    /// `min(m/|q|) g / 2`.
    pub fn check_admissible(mut self, w: &World, species: &SpeciesPair) -> Result<Self> {
        let bound = admissible_gradient_bound(w, species);
        if self.grad_bound > bound {
            return Err(Error::Inadmissible { measured: self.grad_bound, bound });
        }
        self.admissible = true;
        Ok(self)
    }

    pub fn is_admissible(&self) -> bool {
        self.admissible
    }

    pub fn is_static(&self) -> bool {
        match &self.mode {
            FieldMode::Zero | FieldMode::Sampled3D(_) => true,
            FieldMode::Analytic(a) => a.is_static(),
            FieldMode::Slab(s) => s.parts.iter().all(|(_, w)| matches!(w, TimeWeight::Const(_))),
        }
    }

    /// True when the potential depends on `x3` only.
    pub fn is_slab(&self) -> bool {
        matches!(self.mode, FieldMode::Zero | FieldMode::Slab(_))
    }

    pub fn start_time(&self) -> f64 {
        self.time.unwrap_or(0.0)
    }

    #[inline]
    pub fn potential(&self, t: f64, x: &Vec3) -> f64 {
        match &self.mode {
            FieldMode::Zero => 0.0,
            FieldMode::Analytic(a) => a.value(t, x),
            FieldMode::Slab(s) => s.eval(t, x[2]).0,
            FieldMode::Sampled3D(g) => g.value(x),
        }
    }

    #[inline]
    pub fn gradient(&self, t: f64, x: &Vec3) -> Vec3 {
        match &self.mode {
            FieldMode::Zero => [0.0; 3],
            FieldMode::Analytic(a) => a.gradient(t, x),
            FieldMode::Slab(s) => [0.0, 0.0, s.eval(t, x[2]).1],
            FieldMode::Sampled3D(g) => g.gradient(x),
        }
    }

    pub fn time_derivative(&self, t: f64, x: &Vec3) -> f64 {
        match &self.mode {
            FieldMode::Zero | FieldMode::Sampled3D(_) => 0.0,
            FieldMode::Analytic(a) => a.time_derivative(t, x),
            FieldMode::Slab(s) => s.eval(t, x[2]).2,
        }
    }

    /// `d3 phi(x_par, 0)`.
    pub fn wall_normal_derivative(&self, t: f64, x_par: &[f64; 2]) -> f64 {
        self.gradient(t, &[x_par[0], x_par[1], 0.0])[2]
    }

    /// Slab fast path: `(phi, d3 phi)`; zero for non-slab modes.
    #[inline]
    pub fn slab_eval(&self, t: f64, x3: f64) -> (f64, f64) {
        match &self.mode {
            FieldMode::Slab(s) => {
                let (v, d, _) = s.eval(t, x3);
                (v, d)
            }
            _ => (0.0, 0.0),
        }
    }
}
