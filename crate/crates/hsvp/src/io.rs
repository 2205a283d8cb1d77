//! Run configuration, the density CSV reader and deterministic writers.
//!
//! Configuration is TOML with an explicit `schema_version`; unknown keys are
//! rejected and every error names the offending field path.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::{BoundaryKind, BoundarySpec, TemperatureProfile};
use crate::error::{Error, Result};
use crate::physcore::{derived_constants, Label, Species, SpeciesPair, World};
use crate::poisson::{DecayCertificate, SlabProfile};
use crate::steady::{MomentumQuadrature, SteadyConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub world: WorldSection,
    pub species: SpeciesSection,
    pub boundary: BoundarySection,
    #[serde(default)]
    pub steady: SteadySection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub trace: Option<TraceSection>,
    #[serde(default)]
    pub poisson: Option<PoissonSection>,
    #[serde(default)]
    pub juttner: Option<JuttnerSection>,
}

fn one() -> f64 {
    1.0
}

/// Physical constants. Units are those of the model: `c` speed of light,
/// `g` gravitational acceleration, `b3` vertical magnetic field, `beta` and
/// `beta_tilde` inverse-momentum weight exponents, `epsilon` the specular
/// fraction and `p_max` the momentum support radius of the wall data.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "one")]
    pub g: f64,
    #[serde(default)]
    pub b3: f64,
    #[serde(default = "one")]
    pub beta: f64,
    /// Defaults to `beta`.
    #[serde(default)]
    pub beta_tilde: Option<f64>,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub p_max: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    pub plus: SpeciesEntry,
    pub minus: SpeciesEntry,
}

/// Rest mass and signed charge of one species.
#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesEntry {
    pub mass: f64,
    pub charge: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub plus: BoundaryEntry,
    pub minus: BoundaryEntry,
}

/// Wall data of one species, selected by `kind`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryEntry {
    Zero,
    IsothermalSimple {
        #[serde(default)]
        p_max: Option<f64>,
    },
    SimpleNonIsothermal {
        temperature: TemperatureEntry,
        #[serde(default)]
        p_max: Option<f64>,
    },
    JuttnerIsothermal {
        temperature: f64,
        #[serde(default)]
        p_max: Option<f64>,
    },
    JuttnerNonIsothermal {
        temperature: TemperatureEntry,
        #[serde(default)]
        p_max: Option<f64>,
    },
    Exponential {
        amplitude: f64,
        rate: f64,
        #[serde(default)]
        p_max: Option<f64>,
    },
}

/// Either a constant wall temperature or `base + amplitude (offset + |x|)^-power`.
#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum TemperatureEntry {
    Constant(f64),
    Algebraic { base: f64, amplitude: f64, offset: f64, power: f64 },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadySection {
    pub max_iter: usize,
    pub tol: f64,
    pub trace_tol: f64,
    pub probes: usize,
    pub truncation_tol: f64,
    pub force: bool,
    /// Momentum cutoff; derived from `beta` when absent.
    pub p_cut: Option<f64>,
    pub panels: usize,
    pub per_panel: usize,
}

impl Default for SteadySection {
    fn default() -> Self {
        SteadySection { max_iter: 30, tol: 1e-11, trace_tol: 1e-12, probes: 512, truncation_tol: 1e-12, force: false, p_cut: None, panels: 24, per_panel: 8 }
    }
}

/// Perturbation run. Heights and momenta in model units; `horizons` sets
/// the end time `horizons / lambda` unless `t_end` is given.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub nx: usize,
    pub nr: usize,
    pub np: usize,
    pub x_top: Option<f64>,
    pub r_max: Option<f64>,
    pub p_top: Option<f64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub horizons: f64,
    pub tol: f64,
    /// Initial perturbation `amplitude (1 - e^{-wall_scale x3}) e^{-beta E/2}`.
    pub amplitude: f64,
    pub wall_scale: f64,
    pub clip: bool,
    pub cfl_limit: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            nx: 64,
            nr: 32,
            np: 64,
            x_top: None,
            r_max: None,
            p_top: None,
            dt: None,
            t_end: None,
            horizons: 10.0,
            tol: 1e-8,
            amplitude: 0.01,
            wall_scale: 4.0,
            clip: true,
            cfl_limit: 8.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldChoice {
    Zero,
    Steady,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesChoice {
    Plus,
    Minus,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub samples: usize,
    pub derivative_samples: usize,
    pub field: FieldChoice,
    pub species: SpeciesChoice,
    /// Sampling box over `(x1, x2, x3, p1, p2, p3)`.
    pub lo: [f64; 6],
    pub hi: [f64; 6],
    pub tol: f64,
    pub h_fd: f64,
    pub radii: Vec<f64>,
    pub beta_prime: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            samples: 10_000,
            derivative_samples: 1000,
            field: FieldChoice::Steady,
            species: SpeciesChoice::Plus,
            lo: [-1.0, -1.0, 0.05, -3.0, -3.0, -3.0],
            hi: [1.0, 1.0, 3.0, 3.0, 3.0, 3.0],
            tol: 1e-10,
            h_fd: 1e-5,
            radii: vec![5.0, 10.0, 20.0, 40.0],
            beta_prime: 0.19,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceDirection {
    Backward,
    Forward,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    #[serde(default = "plus")]
    pub species: SpeciesChoice,
    pub x: [f64; 3],
    pub p: [f64; 3],
    #[serde(default = "backward")]
    pub direction: TraceDirection,
    #[serde(default = "zero_field")]
    pub field: FieldChoice,
    #[serde(default = "trace_tol")]
    pub tol: f64,
}

fn plus() -> SpeciesChoice {
    SpeciesChoice::Plus
}
fn backward() -> TraceDirection {
    TraceDirection::Backward
}
fn zero_field() -> FieldChoice {
    FieldChoice::Zero
}
fn trace_tol() -> f64 {
    1e-12
}

/// Density input for the `poisson` subcommand. A relative `input` path is
/// resolved against the config file's directory. The optional certificate
/// bounds the density beyond the last row by `amplitude e^{-rate x3}`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSection {
    pub input: String,
    #[serde(default)]
    pub certificate_amplitude: Option<f64>,
    #[serde(default)]
    pub certificate_rate: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct JuttnerSection {
    pub temperatures: Vec<f64>,
    pub p_max: f64,
    pub n_p: usize,
    /// Arguments for the Bessel table.
    pub z: Vec<f64>,
}

impl Default for JuttnerSection {
    fn default() -> Self {
        JuttnerSection { temperatures: vec![0.5, 1.0, 2.0], p_max: 20.0, n_p: 201, z: vec![0.5, 1.0, 5.0, 20.0] }
    }
}

fn config_err(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(format!("syntax: {}", e.message())))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path.is_empty() { "<root>" } else { &path }, e.inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        self.world().validate().map_err(|e| config_err("world", e))?;
        for (name, s) in [("species.plus", &self.species.plus), ("species.minus", &self.species.minus)] {
            if !(s.mass.is_finite() && s.mass > 0.0) {
                return Err(config_err(&format!("{name}.mass"), "must be > 0"));
            }
            if !(s.charge.is_finite() && s.charge != 0.0) {
                return Err(config_err(&format!("{name}.charge"), "must be finite and nonzero"));
            }
        }
        self.species_pair().map_err(|e| config_err("species", e))?;
        for (name, b) in [("boundary.plus", &self.boundary.plus), ("boundary.minus", &self.boundary.minus)] {
            validate_boundary(name, b)?;
        }
        let s = &self.steady;
        positive("steady.tol", s.tol)?;
        positive("steady.trace_tol", s.trace_tol)?;
        positive("steady.truncation_tol", s.truncation_tol)?;
        if s.max_iter == 0 {
            return Err(config_err("steady.max_iter", "must be >= 1"));
        }
        if s.panels == 0 || s.per_panel == 0 {
            return Err(config_err("steady.panels", "panels and per_panel must be >= 1"));
        }
        if let Some(p) = s.p_cut {
            positive("steady.p_cut", p)?;
        }
        let d = &self.dynamics;
        if d.nx < 4 || d.nr < 4 || d.np < 8 || d.np % 8 != 0 {
            return Err(config_err("dynamics", "need nx, nr >= 4 and np a positive multiple of 8"));
        }
        for (name, v) in [("dynamics.x_top", d.x_top), ("dynamics.r_max", d.r_max), ("dynamics.p_top", d.p_top), ("dynamics.dt", d.dt), ("dynamics.t_end", d.t_end)] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }
        positive("dynamics.horizons", d.horizons)?;
        positive("dynamics.tol", d.tol)?;
        positive("dynamics.wall_scale", d.wall_scale)?;
        positive("dynamics.cfl_limit", d.cfl_limit)?;
        if !d.amplitude.is_finite() {
            return Err(config_err("dynamics.amplitude", "must be finite"));
        }
        let v = &self.verify;
        for i in 0..6 {
            if !(v.lo[i].is_finite() && v.hi[i].is_finite() && v.lo[i] <= v.hi[i]) {
                return Err(config_err(&format!("verify.lo[{i}]"), "box corners must be finite with lo <= hi"));
            }
        }
        if v.lo[2] < 0.0 {
            return Err(config_err("verify.lo[2]", "heights must be >= 0"));
        }
        positive("verify.tol", v.tol)?;
        positive("verify.h_fd", v.h_fd)?;
        positive("verify.beta_prime", v.beta_prime)?;
        if v.radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(config_err("verify.radii", "radii must be finite and >= 0"));
        }
        if let Some(t) = &self.trace {
            if t.x.iter().chain(&t.p).any(|v| !v.is_finite()) {
                return Err(config_err("trace", "x and p must be finite"));
            }
            if t.x[2] < 0.0 {
                return Err(config_err("trace.x[2]", "start must satisfy x3 >= 0"));
            }
            positive("trace.tol", t.tol)?;
        }
        if let Some(p) = &self.poisson {
            match (p.certificate_amplitude, p.certificate_rate) {
                (Some(a), Some(r)) => {
                    if !(a.is_finite() && a >= 0.0) {
                        return Err(config_err("poisson.certificate_amplitude", "must be >= 0"));
                    }
                    positive("poisson.certificate_rate", r)?;
                }
                (None, None) => {}
                _ => return Err(config_err("poisson", "certificate_amplitude and certificate_rate go together")),
            }
        }
        if let Some(j) = &self.juttner {
            if j.temperatures.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                return Err(config_err("juttner.temperatures", "must be > 0"));
            }
            positive("juttner.p_max", j.p_max)?;
            if j.n_p < 2 {
                return Err(config_err("juttner.n_p", "must be >= 2"));
            }
            if j.z.iter().any(|z| !(z.is_finite() && *z > 0.0)) {
                return Err(config_err("juttner.z", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn world(&self) -> World {
        let w = &self.world;
        World { c: w.c, g: w.g, b3: w.b3, beta: w.beta, beta_tilde: w.beta_tilde.unwrap_or(w.beta), epsilon: w.epsilon, p_max: w.p_max }
    }

    pub fn species_pair(&self) -> Result<SpeciesPair> {
        SpeciesPair::new(
            Species::new(Label::Plus, self.species.plus.mass, self.species.plus.charge)?,
            Species::new(Label::Minus, self.species.minus.mass, self.species.minus.charge)?,
        )
    }

    pub fn boundary_specs(&self) -> [BoundarySpec; 2] {
        [self.boundary.plus.to_spec(), self.boundary.minus.to_spec()]
    }

    pub fn steady_config(&self) -> Result<SteadyConfig> {
        let [plus, minus] = self.boundary_specs();
        let mut cfg = SteadyConfig::new(self.species_pair()?, self.world(), plus, minus);
        let s = &self.steady;
        cfg.max_iter = s.max_iter;
        cfg.tol = s.tol;
        cfg.trace_tol = s.trace_tol;
        cfg.probes = s.probes;
        cfg.truncation_tol = s.truncation_tol;
        cfg.force = s.force;
        cfg.seed = self.seed;
        cfg.momentum = MomentumQuadrature { p_cut: s.p_cut, panels: s.panels, per_panel: s.per_panel };
        Ok(cfg)
    }

    /// End time of the perturbation run.
    pub fn t_end(&self) -> Result<f64> {
        let lambda = derived_constants(&self.world(), &self.species_pair()?).lambda;
        Ok(self.dynamics.t_end.unwrap_or(self.dynamics.horizons / lambda))
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err(path, format!("must be finite and > 0, got {v}")))
    }
}

fn validate_boundary(name: &str, b: &BoundaryEntry) -> Result<()> {
    let temp = |t: &TemperatureEntry| -> Result<()> {
        match t {
            TemperatureEntry::Constant(v) => positive(&format!("{name}.temperature"), *v),
            TemperatureEntry::Algebraic { base, amplitude, offset, power } => {
                positive(&format!("{name}.temperature.base"), *base)?;
                positive(&format!("{name}.temperature.offset"), *offset)?;
                if !(amplitude.is_finite() && power.is_finite() && *power >= 0.0) {
                    return Err(config_err(&format!("{name}.temperature"), "amplitude and power must be finite, power >= 0"));
                }
                if *amplitude < 0.0 && amplitude.abs() >= *base * offset.powf(*power) {
                    return Err(config_err(&format!("{name}.temperature"), "temperature must stay positive"));
                }
                Ok(())
            }
        }
    };
    let pm = match b {
        BoundaryEntry::Zero => None,
        BoundaryEntry::IsothermalSimple { p_max } => *p_max,
        BoundaryEntry::SimpleNonIsothermal { temperature, p_max } | BoundaryEntry::JuttnerNonIsothermal { temperature, p_max } => {
            temp(temperature)?;
            *p_max
        }
        BoundaryEntry::JuttnerIsothermal { temperature, p_max } => {
            positive(&format!("{name}.temperature"), *temperature)?;
            *p_max
        }
        BoundaryEntry::Exponential { amplitude, rate, p_max } => {
            if !(amplitude.is_finite() && *amplitude >= 0.0) {
                return Err(config_err(&format!("{name}.amplitude"), "must be finite and >= 0"));
            }
            positive(&format!("{name}.rate"), *rate)?;
            *p_max
        }
    };
    if let Some(pm) = pm {
        positive(&format!("{name}.p_max"), pm)?;
    }
    Ok(())
}

impl TemperatureEntry {
    pub fn to_profile(self) -> TemperatureProfile {
        match self {
            TemperatureEntry::Constant(t) => TemperatureProfile::Constant(t),
            TemperatureEntry::Algebraic { base, amplitude, offset, power } => TemperatureProfile::Algebraic { base, amplitude, offset, power },
        }
    }
}

impl BoundaryEntry {
    pub fn to_spec(&self) -> BoundarySpec {
        let (kind, pm) = match self {
            BoundaryEntry::Zero => (BoundaryKind::Zero, None),
            BoundaryEntry::IsothermalSimple { p_max } => (BoundaryKind::IsothermalSimple, *p_max),
            BoundaryEntry::SimpleNonIsothermal { temperature, p_max } => (BoundaryKind::SimpleNonIsothermal(temperature.to_profile()), *p_max),
            BoundaryEntry::JuttnerIsothermal { temperature, p_max } => (BoundaryKind::JuttnerIsothermal { temperature: *temperature }, *p_max),
            BoundaryEntry::JuttnerNonIsothermal { temperature, p_max } => (BoundaryKind::JuttnerNonIsothermal(temperature.to_profile()), *p_max),
            BoundaryEntry::Exponential { amplitude, rate, p_max } => (BoundaryKind::Exponential { amplitude: *amplitude, rate: *rate }, *p_max),
        };
        let spec = BoundarySpec::new(kind);
        match pm {
            Some(p) => spec.with_support(p),
            None => spec,
        }
    }
}

/// Reads a two-column `x3,rho` table. Lines starting with `#` are comments.
pub fn read_slab_csv(input: impl Read, certificate: Option<DecayCertificate>) -> Result<SlabProfile> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "x3" || &headers[1] != "rho" {
        return Err(Error::Csv(format!("expected header `x3,rho`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let (mut x, mut rho) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(format!("row {}: {e}", i + 1)))?;
        if rec.len() != 2 {
            return Err(Error::Csv(format!("row {}: expected 2 fields, got {}", i + 1, rec.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Csv(format!("row {}: `{s}`: {e}", i + 1)));
        x.push(parse(&rec[0])?);
        rho.push(parse(&rec[1])?);
    }
    SlabProfile::new(x, rho, certificate).map_err(|e| Error::Csv(e.to_string()))
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes a CSV table: a `# config_sha256=` comment, the header and rows in
/// shortest round-trip form.
pub fn write_table(mut out: impl Write, config_hash: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut buf = String::new();
    buf.push_str("# config_sha256=");
    buf.push_str(config_hash);
    buf.push('\n');
    buf.push_str(&header.join(","));
    buf.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        buf.push_str(&cells.join(","));
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

/// Run record written next to the artifacts.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub subcommand: String,
    pub schema_version: u32,
    pub hsvp_version: String,
    pub artifacts: Vec<String>,
    /// Subcommand-specific scalars.
    pub results: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(config_sha256: &str, seed: u64, subcommand: &str) -> Self {
        Manifest {
            config_sha256: config_sha256.into(),
            seed,
            subcommand: subcommand.into(),
            schema_version: SCHEMA_VERSION,
            hsvp_version: env!("CARGO_PKG_VERSION").into(),
            artifacts: Vec::new(),
            results: serde_json::Map::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
