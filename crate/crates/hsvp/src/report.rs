//! Pass/fail/advisory records shared by gates, bound reports and suites.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Advisory,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub measured: f64,
    pub tolerance: f64,
    /// Which statement of the theory the check encodes, in words.
    pub basis: String,
}

impl Check {
    /// `measured <= tolerance` decides pass or fail.
    pub fn upper(name: &str, measured: f64, tolerance: f64, basis: &str) -> Check {
        let status = if measured <= tolerance { Status::Pass } else { Status::Fail };
        Check { name: name.into(), status, measured, tolerance, basis: basis.into() }
    }

    /// Same comparison, but only ever informative.
    pub fn advisory(name: &str, measured: f64, tolerance: f64, basis: &str) -> Check {
        Check { name: name.into(), status: Status::Advisory, measured, tolerance, basis: basis.into() }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }

    /// True for an advisory whose comparison would have failed.
    pub fn warns(&self) -> bool {
        self.status == Status::Advisory && !(self.measured <= self.tolerance)
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(Check::passed)
}
