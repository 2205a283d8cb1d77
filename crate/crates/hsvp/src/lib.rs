//! Relativistic two-species Vlasov-Poisson system on the half space
//! `x3 > 0` with gravity, a vertical magnetic field and inflow or
//! partially specular boundary data.

pub mod boundary;
pub mod characteristics;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod io;
pub mod ode;
pub mod physcore;
pub mod poisson;
pub mod quad;
pub mod report;
pub mod sobol;
pub mod steady;
pub mod verification;

pub use error::{Error, Result};
