//! Inflow boundary data, the modified Bessel functions used to normalize
//! them, and the inflow/specular composition rule.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::physcore::{dot, total_energy, Species, Vec3, World};
use crate::quad;

const BESSEL_TOL: f64 = 1e-13;

// Upper limit of the theta integral: past it the integrand is below
// e^{-45} of its peak (with room for a sinh^4 growth factor).
fn theta_cutoff(z: f64) -> f64 {
    let mut t = 1.0f64;
    while z * 2.0 * (0.5 * t).sinh().powi(2) - 4.0 * t < 45.0 {
        t += 0.5;
    }
    t
}

fn scaled_integral(z: f64, weight: impl Fn(f64) -> f64) -> Result<f64> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::InvalidParameter(format!("Bessel argument must be > 0, got {z}")));
    }
    let top = theta_cutoff(z);
    // e^{z} K(z): the exponent z(1 - cosh t) = -2 z sinh^2(t/2) stays tame
    let f = |t: f64| (-2.0 * z * (0.5 * t).sinh().powi(2)).exp() * weight(t);
    // split where the exponential has fallen by e^{-1} to help the adaptive rule
    let knee = (1.0 + 1.0 / z).acosh().min(top * 0.5);
    let a = quad::adaptive(f, 0.0, knee, BESSEL_TOL, 0.0)?;
    let b = quad::adaptive(f, knee, top, BESSEL_TOL, 0.0)?;
    Ok(a + b)
}

/// `e^z K_0(z)`.
pub fn bessel_k0_scaled(z: f64) -> Result<f64> {
    scaled_integral(z, |_| 1.0)
}

/// `e^z K_1(z)`.
pub fn bessel_k1_scaled(z: f64) -> Result<f64> {
    scaled_integral(z, |t| t.cosh())
}

/// `e^z K_2(z)`, from `K_2(z) = (z^2/3) int_0^inf e^{-z cosh t} sinh^4 t dt`.
pub fn bessel_k2_scaled(z: f64) -> Result<f64> {
    Ok(z * z / 3.0 * scaled_integral(z, |t| t.sinh().powi(4))?)
}

pub fn bessel_k0(z: f64) -> Result<f64> {
    Ok(bessel_k0_scaled(z)? * (-z).exp())
}

pub fn bessel_k1(z: f64) -> Result<f64> {
    Ok(bessel_k1_scaled(z)? * (-z).exp())
}

pub fn bessel_k2(z: f64) -> Result<f64> {
    Ok(bessel_k2_scaled(z)? * (-z).exp())
}

/// Log of the Juttner density with wall temperature `temperature` (k_B = 1).
pub fn log_juttner(sp: &Species, w: &World, temperature: f64, p: &Vec3) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!("temperature must be > 0, got {temperature}")));
    }
    let (m, c) = (sp.mass, w.c);
    let z = m * c * c / temperature;
    let k2s = bessel_k2_scaled(z)?;
    let p0 = total_energy(sp, w, p);
    let norm = 4.0 * std::f64::consts::PI * sp.charge_magnitude() * m * m * c * temperature * k2s;
    Ok(-c * (p0 - m * c) / temperature - norm.ln())
}

/// Juttner density normalized so that `|q| int G dp = 1`.
pub fn juttner(sp: &Species, w: &World, temperature: f64, p: &Vec3) -> Result<f64> {
    Ok(log_juttner(sp, w, temperature, p)?.exp())
}

/// Wall temperature as a function of the horizontal position.
#[derive(Clone)]
pub enum TemperatureProfile {
    Constant(f64),
    /// `base + amplitude (offset + |x|)^(-power)`.
    Algebraic { base: f64, amplitude: f64, offset: f64, power: f64 },
    Custom(Arc<dyn Fn(&[f64; 2]) -> f64 + Send + Sync>),
}

impl fmt::Debug for TemperatureProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemperatureProfile::Constant(t) => write!(f, "Constant({t})"),
            TemperatureProfile::Algebraic { base, amplitude, offset, power } => {
                write!(f, "Algebraic({base} + {amplitude} ({offset} + |x|)^-{power})")
            }
            TemperatureProfile::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl TemperatureProfile {
    pub fn value(&self, x: &[f64; 2]) -> f64 {
        match self {
            TemperatureProfile::Constant(t) => *t,
            TemperatureProfile::Algebraic { base, amplitude, offset, power } => {
                base + amplitude * (offset + x[0].hypot(x[1])).powf(-power)
            }
            TemperatureProfile::Custom(f) => f(x),
        }
    }

    /// Checks positivity everywhere sampled and, when `asymptotic`, the
    /// approach `|T - 1| <= (20 + |x|)^-4`.
    pub fn check(&self, samples: &[[f64; 2]], asymptotic: bool) -> Result<()> {
        for x in samples {
            let t = self.value(x);
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Certificate(format!("temperature {t} at {x:?} is not positive")));
            }
            if asymptotic {
                let bound = (20.0 + x[0].hypot(x[1])).powi(-4);
                if (t - 1.0).abs() > bound * (1.0 + 1e-12) + 4.0 * f64::EPSILON * t.abs() {
                    return Err(Error::Certificate(format!(
                        "|T - 1| = {:e} exceeds {bound:e} at {x:?}",
                        (t - 1.0).abs()
                    )));
                }
            }
        }
        Ok(())
    }
}

type CustomFn = Arc<dyn Fn(&Species, &World, &[f64; 2], &Vec3) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum BoundaryKind {
    Zero,
    /// `(1/(|q| m^2)) e^{-p0/2}`.
    IsothermalSimple,
    /// The same profile with a local temperature: `(1/(|q| m^2 T)) e^{-p0/(2T)}`.
    SimpleNonIsothermal(TemperatureProfile),
    JuttnerIsothermal { temperature: f64 },
    JuttnerNonIsothermal(TemperatureProfile),
    /// `amplitude * e^{-rate p0}`.
    Exponential { amplitude: f64, rate: f64 },
    /// User callable of `(species, world, wall point, p)`; must be
    /// nonnegative and safe to call concurrently. `slab` declares that the
    /// value depends on `|p_par|` and `p3` only.
    Custom { f: CustomFn, slab: bool },
}

impl fmt::Debug for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryKind::Zero => write!(f, "Zero"),
            BoundaryKind::IsothermalSimple => write!(f, "IsothermalSimple"),
            BoundaryKind::SimpleNonIsothermal(t) => write!(f, "SimpleNonIsothermal({t:?})"),
            BoundaryKind::JuttnerIsothermal { temperature } => write!(f, "JuttnerIsothermal({temperature})"),
            BoundaryKind::JuttnerNonIsothermal(t) => write!(f, "JuttnerNonIsothermal({t:?})"),
            BoundaryKind::Exponential { amplitude, rate } => write!(f, "Exponential({amplitude}, {rate})"),
            BoundaryKind::Custom { slab, .. } => write!(f, "Custom(slab = {slab})"),
        }
    }
}

/// Inflow data for one species, optionally cut off smoothly at `p_max`.
#[derive(Clone, Debug)]
pub struct BoundarySpec {
    pub kind: BoundaryKind,
    pub p_max: Option<f64>,
}

impl BoundarySpec {
    pub fn new(kind: BoundaryKind) -> Self {
        BoundarySpec { kind, p_max: None }
    }

    pub fn with_support(mut self, p_max: f64) -> Self {
        self.p_max = Some(p_max);
        self
    }

    /// True when the data depend on `(|p_par|, p3)` only.
    pub fn is_slab(&self) -> bool {
        match &self.kind {
            BoundaryKind::SimpleNonIsothermal(t) | BoundaryKind::JuttnerNonIsothermal(t) => {
                matches!(t, TemperatureProfile::Constant(_))
            }
            BoundaryKind::Custom { slab, .. } => *slab,
            _ => true,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, BoundaryKind::Zero)
    }

    // Smooth cutoff (1 - |p|^2/p_max^2)^3 so the data stay C^2.
    fn support_factor(&self, p: &Vec3) -> f64 {
        match self.p_max {
            None => 1.0,
            Some(pm) => {
                let u = dot(p, p) / (pm * pm);
                if u >= 1.0 {
                    0.0
                } else {
                    (1.0 - u).powi(3)
                }
            }
        }
    }

    /// Raw profile value, without the incoming-direction check.
    pub fn profile(&self, sp: &Species, w: &World, x_wall: &[f64; 2], p: &Vec3) -> f64 {
        let cut = self.support_factor(p);
        if cut == 0.0 {
            return 0.0;
        }
        let p0 = total_energy(sp, w, p);
        let base = sp.charge_magnitude() * sp.mass * sp.mass;
        let v = match &self.kind {
            BoundaryKind::Zero => 0.0,
            BoundaryKind::IsothermalSimple => (-0.5 * p0).exp() / base,
            BoundaryKind::SimpleNonIsothermal(t) => {
                let t = t.value(x_wall);
                (-0.5 * p0 / t).exp() / (base * t)
            }
            BoundaryKind::JuttnerIsothermal { temperature } => {
                juttner(sp, w, *temperature, p).unwrap_or(f64::NAN)
            }
            BoundaryKind::JuttnerNonIsothermal(t) => juttner(sp, w, t.value(x_wall), p).unwrap_or(f64::NAN),
            BoundaryKind::Exponential { amplitude, rate } => amplitude * (-rate * p0).exp(),
            BoundaryKind::Custom { f, .. } => f(sp, w, x_wall, p),
        };
        cut * v
    }

    /// Slab form of the profile as a function of `|p_par|` and `p3`.
    pub fn profile_slab(&self, sp: &Species, w: &World, r: f64, p3: f64) -> f64 {
        self.profile(sp, w, &[0.0, 0.0], &[r, 0.0, p3])
    }

    /// Sup of `e^{beta p0} G` over incoming momenta, closed form where
    /// available and sampled otherwise.
    pub fn weighted_sup(&self, sp: &Species, w: &World, beta: f64) -> f64 {
        let mc = sp.mass * w.c;
        let base = sp.charge_magnitude() * sp.mass * sp.mass;
        match (&self.kind, self.p_max) {
            (BoundaryKind::Zero, _) => 0.0,
            (BoundaryKind::Exponential { amplitude, rate }, None) => {
                if beta > *rate {
                    f64::INFINITY
                } else {
                    amplitude * ((beta - rate) * mc).exp()
                }
            }
            (BoundaryKind::IsothermalSimple, None) => {
                if beta > 0.5 {
                    f64::INFINITY
                } else {
                    ((beta - 0.5) * mc).exp() / base
                }
            }
            _ => {
                // radial scan in |p| on a fine log grid plus a few wall points
                let top = self.p_max.unwrap_or(200.0 / beta.max(1e-3));
                let walls = [[0.0, 0.0], [5.0, 0.0], [20.0, 0.0], [100.0, 0.0], [1e3, 0.0]];
                let mut best = 0.0f64;
                for xw in walls.iter() {
                    for k in 0..=4000 {
                        let s = top * (k as f64 / 4000.0).powi(2);
                        for dir in [[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [1.0, 0.0, 1e-9]] {
                            let p = [s * dir[0], s * dir[1], s * dir[2]];
                            let v = self.profile(sp, w, xw, &p) * (beta * total_energy(sp, w, &p)).exp();
                            best = best.max(v);
                        }
                    }
                    if self.is_slab() {
                        break;
                    }
                }
                best
            }
        }
    }
}

impl BoundarySpec {
    /// Sampled sup of `e^{beta p0} |grad_{x_par, p} G|` over incoming
    /// momenta, by central differences on the same scan as
    /// [`BoundarySpec::weighted_sup`].
    pub fn weighted_grad_sup(&self, sp: &Species, w: &World, beta: f64) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let top = self.p_max.unwrap_or(200.0 / beta.max(1e-3));
        let walls: &[[f64; 2]] = if self.is_slab() { &[[0.0, 0.0]] } else { &[[0.0, 0.0], [5.0, 0.0], [20.0, 0.0], [100.0, 0.0]] };
        let mut best = 0.0f64;
        for xw in walls {
            for k in 1..=2000 {
                let s = top * (k as f64 / 2000.0).powi(2);
                for dir in [[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.96, 0.0, 0.28]] {
                    let p = [s * dir[0], s * dir[1], s * dir[2]];
                    let h = 1e-6 * (1.0 + s);
                    let mut g2 = 0.0;
                    for i in 0..3 {
                        let (mut a, mut b) = (p, p);
                        a[i] += h;
                        b[i] -= h;
                        let d = (self.profile(sp, w, xw, &a) - self.profile(sp, w, xw, &b)) / (2.0 * h);
                        g2 += d * d;
                    }
                    if !self.is_slab() {
                        for i in 0..2 {
                            let (mut a, mut b) = (*xw, *xw);
                            a[i] += h;
                            b[i] -= h;
                            let d = (self.profile(sp, w, &a, &p) - self.profile(sp, w, &b, &p)) / (2.0 * h);
                            g2 += d * d;
                        }
                    }
                    best = best.max(g2.sqrt() * (beta * total_energy(sp, w, &p)).exp());
                }
            }
        }
        best
    }
}

/// `G(x_wall, p)` on the incoming part of the wall, `p3 > 0`.
pub fn inflow_value(spec: &BoundarySpec, sp: &Species, w: &World, x_wall: &[f64; 2], p: &Vec3) -> Result<f64> {
    if !(p[2] > 0.0) {
        return Err(Error::NotIncoming(p[2]));
    }
    Ok(spec.profile(sp, w, x_wall, p))
}

/// Mixed inflow/specular boundary value `G + epsilon * reflected`.
pub fn boundary_compose(
    spec: &BoundarySpec,
    sp: &Species,
    w: &World,
    x_wall: &[f64; 2],
    p: &Vec3,
    reflected_value: f64,
) -> Result<f64> {
    let g = inflow_value(spec, sp, w, x_wall, p)?;
    if w.epsilon == 0.0 {
        return Ok(g);
    }
    Ok(g + w.epsilon * reflected_value)
}

/// Left side of the specular smallness gate,
/// `epsilon (1 + beta_tilde) e^{(beta_tilde/2) sqrt((mc)^2 + p_max^2)}`; the gate
/// passes when it is at most 1/4.
pub fn specular_gate_value(w: &World, sp: &Species) -> Option<f64> {
    let pm = w.p_max?;
    let mc = sp.mass * w.c;
    Some(w.epsilon * (1.0 + w.beta_tilde) * (0.5 * w.beta_tilde * (mc * mc + pm * pm).sqrt()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physcore::Label;

    fn unit() -> (Species, World) {
        (Species { label: Label::Plus, mass: 1.0, charge: 1.0 }, World::default())
    }

    #[test]
    fn k2_reference_value() {
        let v = bessel_k2(1.0).unwrap();
        assert!((v - 1.624838898635177).abs() < 1e-12);
    }

    #[test]
    fn isothermal_value() {
        let (sp, w) = unit();
        let spec = BoundarySpec::new(BoundaryKind::IsothermalSimple);
        let v = inflow_value(&spec, &sp, &w, &[0.0, 0.0], &[0.0, 0.0, 3f64.sqrt()]).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!(inflow_value(&spec, &sp, &w, &[0.0, 0.0], &[0.0, 0.0, -1.0]).is_err());
    }

    #[test]
    fn compose_rules() {
        let (sp, mut w) = unit();
        let zero = BoundarySpec::new(BoundaryKind::Zero);
        w.epsilon = 0.1;
        let v = boundary_compose(&zero, &sp, &w, &[0.0, 0.0], &[0.0, 0.0, 1.0], 2.0).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn support_cutoff() {
        let (sp, w) = unit();
        let spec = BoundarySpec::new(BoundaryKind::Exponential { amplitude: 1.0, rate: 1.0 }).with_support(2.0);
        assert_eq!(spec.profile(&sp, &w, &[0.0, 0.0], &[0.0, 0.0, 2.0]), 0.0);
        assert!(spec.profile(&sp, &w, &[0.0, 0.0], &[0.0, 0.0, 1.9]) > 0.0);
    }
}
