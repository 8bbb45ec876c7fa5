//! Sobol low-discrepancy sequence with digital shift.
//!
//! Direction numbers follow the Joe-Kuo construction (the same primitive
//! polynomials and initial values used by scipy's generator, bundled here for
//! the first 64 dimensions). Points are emitted in Gray-code order, which
//! matches scipy's unscrambled output row for row.
//!
//! A per-dimension digital shift (XOR of the 32-bit integer sample with a
//! seeded mask) decorrelates runs without disturbing dyadic equidistribution.
//! Any point with a coordinate of exactly zero is skipped before emission; in
//! the unshifted sequence that is precisely the index-0 all-zeros point, and
//! with a shift it guarantees output strictly inside the open unit cube.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest supported dimension of the bundled direction-number table.
pub const MAX_DIM: usize = 64;

const BITS: usize = 32;

/// Primitive polynomial (with leading and trailing bits) and initial m-values
/// for dimensions 1..64. Dimension 0 is the van der Corput sequence.
#[rustfmt::skip]
const JOE_KUO: [(u32, &[u32]); 63] = [
    (3, &[1]),
    (7, &[1, 3]),
    (11, &[1, 3, 1]),
    (13, &[1, 1, 1]),
    (19, &[1, 1, 3, 3]),
    (25, &[1, 3, 5, 13]),
    (37, &[1, 1, 5, 5, 17]),
    (41, &[1, 1, 5, 5, 5]),
    (47, &[1, 1, 7, 11, 19]),
    (55, &[1, 1, 5, 1, 1]),
    (59, &[1, 1, 1, 3, 11]),
    (61, &[1, 3, 5, 5, 31]),
    (67, &[1, 3, 3, 9, 7, 49]),
    (91, &[1, 1, 1, 15, 21, 21]),
    (97, &[1, 3, 1, 13, 27, 49]),
    (103, &[1, 1, 1, 15, 7, 5]),
    (109, &[1, 3, 1, 15, 13, 25]),
    (115, &[1, 1, 5, 5, 19, 61]),
    (131, &[1, 3, 7, 11, 23, 15, 103]),
    (137, &[1, 3, 7, 13, 13, 15, 69]),
    (143, &[1, 1, 3, 13, 7, 35, 63]),
    (145, &[1, 3, 5, 9, 1, 25, 53]),
    (157, &[1, 3, 1, 13, 9, 35, 107]),
    (167, &[1, 3, 1, 5, 27, 61, 31]),
    (171, &[1, 1, 5, 11, 19, 41, 61]),
    (185, &[1, 3, 5, 3, 3, 13, 69]),
    (191, &[1, 1, 7, 13, 1, 19, 1]),
    (193, &[1, 3, 7, 5, 13, 19, 59]),
    (203, &[1, 1, 3, 9, 25, 29, 41]),
    (211, &[1, 3, 5, 13, 23, 1, 55]),
    (213, &[1, 3, 7, 3, 13, 59, 17]),
    (229, &[1, 3, 1, 3, 5, 53, 69]),
    (239, &[1, 1, 5, 5, 23, 33, 13]),
    (241, &[1, 1, 7, 7, 1, 61, 123]),
    (247, &[1, 1, 7, 9, 13, 61, 49]),
    (253, &[1, 3, 3, 5, 3, 55, 33]),
    (285, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (299, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (301, &[1, 3, 1, 11, 11, 11, 77, 249]),
    (333, &[1, 3, 1, 11, 27, 43, 71, 9]),
    (351, &[1, 1, 7, 15, 21, 11, 81, 45]),
    (355, &[1, 3, 7, 3, 25, 31, 65, 79]),
    (357, &[1, 3, 1, 1, 19, 11, 3, 205]),
    (361, &[1, 1, 5, 9, 19, 21, 29, 157]),
    (369, &[1, 3, 7, 11, 1, 33, 89, 185]),
    (391, &[1, 3, 3, 3, 15, 9, 79, 71]),
    (397, &[1, 3, 7, 11, 15, 39, 119, 27]),
    (425, &[1, 1, 3, 1, 11, 31, 97, 225]),
    (451, &[1, 1, 1, 3, 23, 43, 57, 177]),
    (463, &[1, 3, 7, 7, 17, 17, 37, 71]),
    (487, &[1, 3, 1, 5, 27, 63, 123, 213]),
    (501, &[1, 1, 3, 5, 11, 43, 53, 133]),
    (529, &[1, 3, 5, 5, 29, 17, 47, 173, 479]),
    (539, &[1, 3, 3, 11, 3, 1, 109, 9, 69]),
    (545, &[1, 1, 1, 5, 17, 39, 23, 5, 343]),
    (557, &[1, 3, 1, 5, 25, 15, 31, 103, 499]),
    (563, &[1, 1, 1, 11, 11, 17, 63, 105, 183]),
    (601, &[1, 1, 5, 11, 9, 29, 97, 231, 363]),
    (607, &[1, 1, 5, 15, 19, 45, 41, 7, 383]),
    (617, &[1, 3, 7, 7, 31, 19, 83, 137, 221]),
    (623, &[1, 1, 1, 3, 23, 15, 111, 223, 83]),
    (631, &[1, 1, 5, 13, 31, 15, 55, 25, 161]),
    (637, &[1, 1, 3, 13, 25, 47, 39, 87, 257]),
];

fn directions(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (c, slot) in v.iter_mut().enumerate() {
            *slot = 1 << (31 - c);
        }
        return v;
    }
    let (poly, m) = JOE_KUO[dim - 1];
    let degree = (32 - poly.leading_zeros() - 1) as usize;
    for c in 0..degree {
        v[c] = m[c] << (31 - c);
    }
    for c in degree..BITS {
        let mut val = v[c - degree] ^ (v[c - degree] >> degree);
        for k in 1..degree {
            if (poly >> (degree - k)) & 1 == 1 {
                val ^= v[c - k];
            }
        }
        v[c] = val;
    }
    v
}

/// Incremental Sobol generator over the unit cube.
#[derive(Debug, Clone)]
pub struct SobolSequence {
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
    index: u64,
}

impl SobolSequence {
    /// Unshifted sequence (the raw net; first emitted point of dimension one
    /// is 0.5 because the all-zeros point is skipped).
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_shift(dim, vec![0; dim])
    }

    /// Sequence with a digital shift derived from `seed`.
    pub fn shifted(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.random::<u32>()).collect();
        Self::with_shift(dim, shift)
    }

    fn with_shift(dim: usize, shift: Vec<u32>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension { dim, max: MAX_DIM });
        }
        Ok(SobolSequence {
            directions: (0..dim).map(directions).collect(),
            shift,
            index: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Integer sample at a given sequence index, Gray-code order.
    fn raw_at(&self, index: u64, dim: usize) -> u32 {
        let mut n = index ^ (index >> 1);
        let mut x = 0u32;
        let mut c = 0;
        while n != 0 && c < BITS {
            if n & 1 == 1 {
                x ^= self.directions[dim][c];
            }
            n >>= 1;
            c += 1;
        }
        x ^ self.shift[dim]
    }

    /// Next point in the open unit cube `(0,1)^d`.
    pub fn next_point(&mut self) -> Vec<f64> {
        loop {
            let idx = self.index;
            self.index += 1;
            let ints: Vec<u32> = (0..self.dim()).map(|d| self.raw_at(idx, d)).collect();
            if ints.iter().any(|&x| x == 0) {
                continue;
            }
            return ints
                .into_iter()
                .map(|x| x as f64 / 4294967296.0)
                .collect();
        }
    }

    pub fn take_unit(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // First eight emitted rows in d=6, checked against an independent
    // generator (scipy.stats.qmc.Sobol, unscrambled). Dyadic rationals, so
    // the comparison is exact.
    const EXPECTED_D6: [[f64; 6]; 8] = [
        [0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
        [0.75, 0.25, 0.25, 0.25, 0.75, 0.75],
        [0.25, 0.75, 0.75, 0.75, 0.25, 0.25],
        [0.375, 0.375, 0.625, 0.875, 0.375, 0.125],
        [0.875, 0.875, 0.125, 0.375, 0.875, 0.625],
        [0.625, 0.125, 0.875, 0.625, 0.625, 0.875],
        [0.125, 0.625, 0.375, 0.125, 0.125, 0.375],
        [0.1875, 0.3125, 0.9375, 0.4375, 0.5625, 0.3125],
    ];

    #[test]
    fn matches_reference_generator() {
        let mut seq = SobolSequence::new(6).unwrap();
        for row in EXPECTED_D6 {
            assert_eq!(seq.next_point(), row.to_vec());
        }
    }

    #[test]
    fn unshifted_d1_starts_at_half() {
        let mut seq = SobolSequence::new(1).unwrap();
        assert_eq!(seq.next_point(), vec![0.5]);
    }

    #[test]
    fn rejects_unsupported_dimension() {
        assert!(SobolSequence::new(0).is_err());
        assert!(SobolSequence::new(65).is_err());
        assert!(SobolSequence::new(64).is_ok());
    }

    #[test]
    fn net_balance_in_quadrants() {
        // 1024 shifted points in the unit square: every dyadic cell of side
        // 1/4 holds exactly 1024/16 points (digital shifts preserve dyadic
        // equidistribution).
        let mut seq = SobolSequence::shifted(2, 42).unwrap();
        let pts = seq.take_unit(1024);
        let mut counts = [[0usize; 4]; 4];
        for p in &pts {
            let i = ((p[0] * 4.0) as usize).min(3);
            let j = ((p[1] * 4.0) as usize).min(3);
            counts[i][j] += 1;
        }
        for row in counts {
            for c in row {
                assert_eq!(c, 64);
            }
        }
    }

    #[test]
    fn shift_is_seeded_and_prefix_stable() {
        let mut a = SobolSequence::shifted(5, 9).unwrap();
        let mut b = SobolSequence::shifted(5, 9).unwrap();
        let long = a.take_unit(64);
        let short = b.take_unit(16);
        assert_eq!(&long[..16], &short[..]);
    }
}
