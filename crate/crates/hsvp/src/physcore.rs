//! Species and world parameters, relativistic kinematics, weights and
//! kinetic distances.
//!
//! Units are dimensionful with `m = c = g = 1` as the usual choice. The
//! temperature attached to a weight exponent is `k_B T = c / beta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// A point of phase space with `x3 >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: Vec3,
    pub p: Vec3,
}

impl PhaseState {
    pub fn new(x: Vec3, p: Vec3) -> Result<Self> {
        if !(x[2] >= 0.0) || x.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("phase state needs finite entries and x3 >= 0, got x = {x:?}")));
        }
        Ok(PhaseState { x, p })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Plus,
    Minus,
}

/// One particle species. The charge is stored signed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub label: Label,
    pub mass: f64,
    pub charge: f64,
}

impl Species {
    pub fn new(label: Label, mass: f64, charge: f64) -> Result<Self> {
        let s = Species { label, mass, charge };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::InvalidParameter(format!("mass must be > 0, got {}", self.mass)));
        }
        if !(self.charge.is_finite() && self.charge != 0.0) {
            return Err(Error::InvalidParameter(format!(
                "charge must be finite and nonzero, got {}",
                self.charge
            )));
        }
        Ok(())
    }

    pub fn charge_magnitude(&self) -> f64 {
        self.charge.abs()
    }
}

/// The two species, always in (plus, minus) order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesPair {
    pub plus: Species,
    pub minus: Species,
}

impl SpeciesPair {
    pub fn new(plus: Species, minus: Species) -> Result<Self> {
        plus.validate()?;
        minus.validate()?;
        Ok(SpeciesPair { plus, minus })
    }

    /// Unit masses with charges `+q` and `-q`.
    pub fn symmetric(q: f64) -> Self {
        SpeciesPair {
            plus: Species { label: Label::Plus, mass: 1.0, charge: q },
            minus: Species { label: Label::Minus, mass: 1.0, charge: -q },
        }
    }

    pub fn get(&self, label: Label) -> &Species {
        match label {
            Label::Plus => &self.plus,
            Label::Minus => &self.minus,
        }
    }

    pub fn both(&self) -> [&Species; 2] {
        [&self.plus, &self.minus]
    }

    pub fn m_hat(&self) -> f64 {
        self.plus.mass.min(self.minus.mass)
    }
}

/// Global parameters shared by both species.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub c: f64,
    pub g: f64,
    pub b3: f64,
    pub beta: f64,
    pub beta_tilde: f64,
    /// Specular mixing weight, zero for pure inflow.
    pub epsilon: f64,
    /// Compact momentum support radius of the boundary data, if any.
    pub p_max: Option<f64>,
}

impl Default for World {
    fn default() -> Self {
        World { c: 1.0, g: 1.0, b3: 0.0, beta: 1.0, beta_tilde: 1.0, epsilon: 0.0, p_max: None }
    }
}

impl World {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} = {v}")));
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad("c must be > 0, got c", self.c);
        }
        if !(self.g.is_finite() && self.g > 0.0) {
            return bad("g must be > 0, got g", self.g);
        }
        if !self.b3.is_finite() {
            return bad("b3 must be finite, got b3", self.b3);
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad("beta must be > 0, got beta", self.beta);
        }
        if !(self.beta_tilde > 0.0 && self.beta_tilde <= self.beta) {
            return bad("beta_tilde must lie in (0, beta], got beta_tilde", self.beta_tilde);
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1), got epsilon", self.epsilon);
        }
        if let Some(pm) = self.p_max {
            if !(pm.is_finite() && pm > 0.0) {
                return bad("p_max must be > 0, got p_max", pm);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub m_hat: f64,
    /// Temporal decay rate `g beta m_hat / 48`.
    pub lambda: f64,
    /// Vertical decay rate `g beta m_hat / (16 c)`.
    pub nu: f64,
}

pub fn derived_constants(w: &World, species: &SpeciesPair) -> DerivedConstants {
    let m_hat = species.m_hat();
    DerivedConstants {
        m_hat,
        lambda: w.g * w.beta * m_hat / 48.0,
        nu: w.g * w.beta * m_hat / (16.0 * w.c),
    }
}

/// Largest field gradient for which gravity dominates the electric force on
/// both species: `min(m/|q|) g / 2`.
pub fn admissible_gradient_bound(w: &World, species: &SpeciesPair) -> f64 {
    let r = |s: &Species| s.mass / s.charge_magnitude();
    r(&species.plus).min(r(&species.minus)) * w.g / 2.0
}

#[inline]
pub fn total_energy(sp: &Species, w: &World, p: &Vec3) -> f64 {
    let mc = sp.mass * w.c;
    (mc * mc + dot(p, p)).sqrt()
}

#[inline]
pub fn velocity(sp: &Species, w: &World, p: &Vec3) -> Vec3 {
    let s = w.c / total_energy(sp, w, p);
    [s * p[0], s * p[1], s * p[2]]
}

/// Energy including potential terms, `p0 + (q phi + m g x3) / c`.
#[inline]
pub fn characteristic_energy(sp: &Species, w: &World, phi: f64, x3: f64, p: &Vec3) -> f64 {
    total_energy(sp, w, p) + (sp.charge * phi + sp.mass * w.g * x3) / w.c
}

#[inline]
pub fn log_steady_weight(sp: &Species, w: &World, phi_at_x: f64, x: &Vec3, p: &Vec3, beta: f64) -> f64 {
    beta * characteristic_energy(sp, w, phi_at_x, x[2], p)
}

pub fn steady_weight(sp: &Species, w: &World, phi_at_x: f64, x: &Vec3, p: &Vec3, beta: f64) -> f64 {
    log_steady_weight(sp, w, phi_at_x, x, p, beta).exp()
}

/// Same as the steady weight with the total potential `phi_h + psi` at `(t, x)`.
#[inline]
pub fn log_dynamic_weight(sp: &Species, w: &World, phi_total_at_tx: f64, x: &Vec3, p: &Vec3, beta: f64) -> f64 {
    log_steady_weight(sp, w, phi_total_at_tx, x, p, beta)
}

pub fn dynamic_weight(sp: &Species, w: &World, phi_total_at_tx: f64, x: &Vec3, p: &Vec3, beta: f64) -> f64 {
    log_dynamic_weight(sp, w, phi_total_at_tx, x, p, beta).exp()
}

/// Regularized distance to the grazing set; equals `|v3|` on the wall.
pub fn kinetic_distance(sp: &Species, w: &World, d3phi_at_wall: f64, x: &Vec3, p: &Vec3) -> Result<f64> {
    let v3 = velocity(sp, w, p)[2];
    let m = sp.mass;
    let lorentz = (m * m + dot(p, p) / (w.c * w.c)).sqrt();
    let radicand = x[2] * x[2] + v3 * v3 + 2.0 * (sp.charge * d3phi_at_wall + m * w.g) * x[2] / lorentz;
    if radicand < 0.0 {
        return Err(Error::FieldBound(radicand));
    }
    Ok(radicand.sqrt())
}

/// Specular reflection `(p1, p2, p3) -> (p1, p2, -p3)`.
#[inline]
pub fn reflect(p: &Vec3) -> Vec3 {
    [p[0], p[1], -p[2]]
}
