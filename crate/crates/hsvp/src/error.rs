use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kinetic distance radicand is negative ({0:e}); the field bound is violated")]
    FieldBound(f64),

    #[error("step size underflow at s = {s:e} (h = {h:e})")]
    StepUnderflow { s: f64, h: f64 },

    #[error("step budget of {0} exhausted")]
    StepBudget(usize),

    #[error("exit bound violated: no wall crossing within horizon {horizon:e}")]
    ExitBoundViolated { horizon: f64 },

    #[error("bounce chain needs more than {0} reflections")]
    BounceLimit(usize),

    #[error("kernel evaluated at coincident points")]
    Coincident,

    #[error("density profile: {0}")]
    Density(String),

    #[error("quadrature: {0}")]
    Quadrature(String),

    #[error("no convergence after {iterations} iterations (last distance {distance:e})")]
    NoConvergence { iterations: usize, distance: f64 },

    #[error("field not admissible: |grad phi| = {measured:e} exceeds {bound:e}")]
    Inadmissible { measured: f64, bound: f64 },

    #[error("time step: {0}")]
    Cfl(String),

    #[error("grazing sample: |v_b3| = {0:e}")]
    Grazing(f64),

    #[error("inflow data requested at p3 = {0:e} <= 0")]
    NotIncoming(f64),

    #[error("certificate violated: {0}")]
    Certificate(String),

    #[error("decay fit: {0}")]
    DecayFit(String),

    #[error("gate failed: {0}")]
    Gate(String),

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
