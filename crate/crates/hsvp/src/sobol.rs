//! Sobol low-discrepancy points with a seeded random digital shift.
//!
//! Direction numbers for the first ten dimensions follow the Joe-Kuo
//! tables; dimension one is the van der Corput sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_DIMS: usize = 10;

// (s, a, m_1..m_s) per dimension after the first.
const TABLE: [(u32, u32, &[u32]); MAX_DIMS - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
];

const BITS: usize = 32;

pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dims: usize, seed: u64) -> Result<Self> {
        if dims == 0 || dims > MAX_DIMS {
            return Err(Error::InvalidParameter(format!("sobol dimension {dims} outside 1..={MAX_DIMS}")));
        }
        let mut directions = Vec::with_capacity(dims);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1u32 << (BITS - 1 - k);
        }
        directions.push(first);
        for &(s, a, m) in TABLE.iter().take(dims - 1) {
            let s = s as usize;
            let mut v = [0u32; BITS];
            for k in 0..BITS {
                if k < s {
                    v[k] = m[k] << (BITS - 1 - k);
                } else {
                    let mut x = v[k - s] ^ (v[k - s] >> s);
                    for j in 1..s {
                        if (a >> (s - 1 - j)) & 1 == 1 {
                            x ^= v[k - j];
                        }
                    }
                    v[k] = x;
                }
            }
            directions.push(v);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dims).map(|_| rng.random::<u32>()).collect();
        Ok(Sobol { directions, state: vec![0; dims], shift, index: 0 })
    }

    pub fn dims(&self) -> usize {
        self.state.len()
    }

    /// Next point in the open unit cube.
    pub fn next_point(&mut self) -> Vec<f64> {
        let out = self
            .state
            .iter()
            .zip(&self.shift)
            .map(|(x, s)| ((x ^ s) as f64 + 0.5) / 4294967296.0)
            .collect();
        let c = (!self.index).trailing_zeros() as usize;
        if c < BITS {
            for (x, dir) in self.state.iter_mut().zip(&self.directions) {
                *x ^= dir[c];
            }
        }
        self.index += 1;
        out
    }

    /// `n` points mapped affinely into the box `lo..hi` per dimension.
    pub fn in_box(lo: &[f64], hi: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if lo.len() != hi.len() {
            return Err(Error::InvalidParameter("box bounds differ in length".into()));
        }
        let mut s = Sobol::new(lo.len(), seed)?;
        Ok((0..n)
            .map(|_| {
                s.next_point()
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(u, (a, b))| a + (b - a) * u)
                    .collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unshifted_prefix_matches_reference() {
        let mut s = Sobol::new(3, 0).unwrap();
        s.shift = vec![0; 3];
        let pts: Vec<Vec<f64>> = (0..4).map(|_| s.next_point()).collect();
        let eps = 1e-9;
        let expect = [[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.75, 0.25, 0.25], [0.25, 0.75, 0.75]];
        for (p, e) in pts.iter().zip(expect) {
            for d in 0..3 {
                assert!((p[d] - e[d]).abs() < eps, "{p:?} vs {e:?}");
            }
        }
    }

    #[test]
    fn dims_are_equidistributed() {
        let mut s = Sobol::new(MAX_DIMS, 7).unwrap();
        let n = 1 << 12;
        let mut sums = vec![0.0; MAX_DIMS];
        for _ in 0..n {
            for (acc, u) in sums.iter_mut().zip(s.next_point()) {
                *acc += u;
            }
        }
        for acc in sums {
            assert!((acc / n as f64 - 0.5).abs() < 1e-3);
        }
    }
}
