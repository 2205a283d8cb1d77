//! Dormand-Prince 5(4) embedded pair with step-size control and a
//! zero-crossing event on one state component.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        let s = h * c;
        for i in 0..N {
            out[i] += s * k[i];
        }
    }
    out
}

/// One step of size `h` from `(s, y)` with first stage `k1`. Returns the
/// fifth-order solution, its derivative (for FSAL) and the error vector.
#[inline]
pub fn dopri_step<const N: usize>(
    f: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
    s: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
) -> ([f64; N], [f64; N], [f64; N]) {
    let k2 = f(s + C2 * h, &axpy(y, h, &[(A21, k1)]));
    let k3 = f(s + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = f(s + C4 * h, &axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = f(s + C5 * h, &axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = f(s + h, &axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
    let y5 = axpy(y, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = f(s + h, &y5);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y5, k7, err)
}

/// Zero-crossing event: fires when `sign * y[index]` becomes negative.
#[derive(Clone, Copy, Debug)]
pub struct Event {
    pub index: usize,
    pub sign: f64,
    /// Absolute tolerance on `y[index]` at the located crossing.
    pub tol: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    pub tol: f64,
    pub max_steps: usize,
    pub first_step: f64,
    /// Components excluded from error control (for example accumulators).
    pub unchecked_from: usize,
}

impl Options {
    pub fn new(tol: f64, first_step: f64) -> Self {
        Options { tol, max_steps: 200_000, first_step, unchecked_from: usize::MAX }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct End<const N: usize> {
    pub s: f64,
    pub y: [f64; N],
    pub event: bool,
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrates from `s0` over the signed duration `span`. The observer sees
/// every accepted state, starting with the initial one. With an event the
/// run stops at the first crossing, located by Illinois regula falsi on
/// the step length.
pub fn solve<const N: usize>(
    f: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
    s0: f64,
    y0: [f64; N],
    span: f64,
    opts: &Options,
    event: Option<Event>,
    obs: &mut impl FnMut(f64, &[f64; N]),
) -> Result<End<N>> {
    let dir = if span < 0.0 { -1.0 } else { 1.0 };
    let s_end = s0 + span;
    let mut s = s0;
    let mut y = y0;
    obs(s, &y);
    if span == 0.0 {
        return Ok(End { s, y, event: false, accepted: 0, rejected: 0 });
    }
    let mut k1 = f(s, &y);
    let mut h = dir * opts.first_step.abs().min(span.abs());
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let h_floor = 1e-14 * (1.0 + span.abs());
    loop {
        if accepted + rejected >= opts.max_steps {
            return Err(Error::StepBudget(opts.max_steps));
        }
        let remaining = s_end - s;
        let last = h.abs() >= remaining.abs();
        if last {
            h = remaining;
        }
        let (y5, k7, e) = dopri_step(f, s, &y, &k1, h);
        let mut acc = 0.0;
        let m = N.min(opts.unchecked_from);
        for i in 0..m {
            let sc = opts.tol * (1.0 + y[i].abs().max(y5[i].abs()));
            acc += (e[i] / sc).powi(2);
        }
        let err = (acc / m as f64).sqrt();
        if !err.is_finite() || err > 1.0 {
            rejected += 1;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
            h *= fac;
            if h.abs() < h_floor {
                return Err(Error::StepUnderflow { s, h });
            }
            continue;
        }
        if let Some(ev) = event {
            let g0 = ev.sign * y[ev.index];
            let g1 = ev.sign * y5[ev.index];
            if g1 < 0.0 && g0 >= 0.0 {
                let (s_hit, y_hit) = locate(f, s, &y, &k1, h, ev, g0, g1);
                accepted += 1;
                obs(s_hit, &y_hit);
                return Ok(End { s: s_hit, y: y_hit, event: true, accepted, rejected });
            }
        }
        accepted += 1;
        s = if last { s_end } else { s + h };
        y = y5;
        k1 = k7;
        obs(s, &y);
        if last {
            return Ok(End { s, y, event: false, accepted, rejected });
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
    }
}

/// Replays a fixed step sequence without error control, so that the end
/// state is a smooth function of `y0` (used for difference quotients of the
/// numerical flow). With an event the run stops at the first crossing; past
/// the listed steps it keeps stepping with the last size, at most `extra`
/// more times.
pub fn replay<const N: usize>(
    f: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
    s0: f64,
    y0: [f64; N],
    steps: &[f64],
    event: Option<Event>,
    extra: usize,
) -> Result<End<N>> {
    let mut s = s0;
    let mut y = y0;
    let Some(&last) = steps.last() else {
        return Ok(End { s, y, event: false, accepted: 0, rejected: 0 });
    };
    let total = steps.len() + if event.is_some() { extra } else { 0 };
    let mut k1 = f(s, &y);
    for i in 0..total {
        let h = steps.get(i).copied().unwrap_or(last);
        let (y5, k7, _) = dopri_step(f, s, &y, &k1, h);
        if let Some(ev) = event {
            let g0 = ev.sign * y[ev.index];
            let g1 = ev.sign * y5[ev.index];
            if g1 < 0.0 && g0 >= 0.0 {
                let (s_hit, y_hit) = locate(f, s, &y, &k1, h, ev, g0, g1);
                return Ok(End { s: s_hit, y: y_hit, event: true, accepted: i + 1, rejected: 0 });
            }
        }
        s += h;
        y = y5;
        k1 = k7;
    }
    if event.is_some() {
        return Err(Error::StepBudget(total));
    }
    Ok(End { s, y, event: false, accepted: total, rejected: 0 })
}

#[allow(clippy::too_many_arguments)]
fn locate<const N: usize>(
    f: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
    s: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    ev: Event,
    g0: f64,
    g1: f64,
) -> (f64, [f64; N]) {
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let (mut ga, mut gb) = (g0, g1);
    let mut best = (1.0, dopri_step(f, s, y, k1, h).0);
    if g0 == 0.0 {
        return (s, *y);
    }
    let mut side = 0i32;
    for _ in 0..200 {
        let t = (a * gb - b * ga) / (gb - ga);
        let t = if t > a && t < b { t } else { 0.5 * (a + b) };
        let yt = dopri_step(f, s, y, k1, t * h).0;
        let gt = ev.sign * yt[ev.index];
        best = (t, yt);
        if gt.abs() <= ev.tol || (b - a) * h.abs() <= 1e-15 * (1.0 + s.abs()) {
            break;
        }
        if gt > 0.0 {
            a = t;
            ga = gt;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = t;
            gb = gt;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    (s + best.0 * h, best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let mut f = |_s: f64, y: &[f64; 2]| [y[1], -y[0]];
        let end = solve(&mut f, 0.0, [1.0, 0.0], 2.0 * std::f64::consts::PI, &Options::new(1e-11, 0.1), None, &mut |_, _| {}).unwrap();
        assert!((end.y[0] - 1.0).abs() < 1e-9 && end.y[1].abs() < 1e-9);
    }

    #[test]
    fn event_locates_quarter_period() {
        let mut f = |_s: f64, y: &[f64; 2]| [y[1], -y[0]];
        let ev = Event { index: 0, sign: 1.0, tol: 1e-13 };
        let end = solve(&mut f, 0.0, [1.0, 0.0], 10.0, &Options::new(1e-11, 0.1), Some(ev), &mut |_, _| {}).unwrap();
        assert!(end.event);
        assert!((end.s - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn backward_integration() {
        let mut f = |_s: f64, y: &[f64; 1]| [y[0]];
        let end = solve(&mut f, 0.0, [1.0], -1.0, &Options::new(1e-12, 0.1), None, &mut |_, _| {}).unwrap();
        assert!((end.y[0] - (-1f64).exp()).abs() < 1e-11);
    }
}
