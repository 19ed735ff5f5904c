//! Bit-packed bipolar vectors.
//!
//! Bit `1` encodes `+1` and bit `0` encodes `-1`. Entry `i` lives in word
//! `i / 64`, bit `i % 64`; the serialized byte form is the little-endian
//! byte sequence of those words truncated to `ceil(dim / 8)` bytes, so entry
//! `i` is byte `i / 8`, bit `i % 8`. Padding bits are always zero.

use rand::Rng;

use crate::numerics::Scalar;
use crate::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct BipolarVector {
    dim: usize,
    words: Vec<u64>,
}

fn word_count(dim: usize) -> usize {
    dim.div_ceil(64)
}

/// Bytes needed to store `dim` packed entries.
pub fn packed_len(dim: usize) -> usize {
    dim.div_ceil(8)
}

impl BipolarVector {
    /// All entries `+1`.
    pub fn positive(dim: usize) -> Self {
        let mut v = Self {
            dim,
            words: vec![u64::MAX; word_count(dim)],
        };
        v.clear_padding();
        v
    }

    /// All entries `-1`.
    pub fn negative(dim: usize) -> Self {
        Self {
            dim,
            words: vec![0; word_count(dim)],
        }
    }

    pub fn from_fn(dim: usize, mut positive: impl FnMut(usize) -> bool) -> Self {
        let mut v = Self::negative(dim);
        for i in 0..dim {
            if positive(i) {
                v.words[i / 64] |= 1 << (i % 64);
            }
        }
        v
    }

    /// Sign of each real, with `sign(0) = +1`.
    pub fn from_reals<S: Scalar>(values: &[S]) -> Self {
        Self::from_fn(values.len(), |i| values[i] >= S::zero())
    }

    /// Sign of each integer, with `sign(0) = +1`.
    pub fn from_ints(values: &[i32]) -> Self {
        Self::from_fn(values.len(), |i| values[i] >= 0)
    }

    /// From explicit `±1` entries.
    pub fn from_signs(values: &[i8]) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::Input(format!("bipolar entries must be ±1, got {bad}")));
        }
        Ok(Self::from_fn(values.len(), |i| values[i] > 0))
    }

    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let mut v = Self {
            dim,
            words: (0..word_count(dim)).map(|_| rng.gen()).collect(),
        };
        v.clear_padding();
        v
    }

    fn clear_padding(&mut self) {
        let rem = self.dim % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn is_positive(&self, i: usize) -> bool {
        debug_assert!(i < self.dim);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn get(&self, i: usize) -> i8 {
        if self.is_positive(i) {
            1
        } else {
            -1
        }
    }

    pub fn set(&mut self, i: usize, positive: bool) {
        let mask = 1u64 << (i % 64);
        if positive {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.dim, "flip index {i} out of range {}", self.dim);
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn count_positive(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    fn check_dim(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::dim(context, self.dim, other.dim));
        }
        Ok(())
    }

    /// Number of differing entries.
    pub fn hamming(&self, other: &Self) -> Result<u32> {
        self.check_dim(other, "hamming")?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum())
    }

    /// Inner product, `dim - 2 * hamming`.
    pub fn dot(&self, other: &Self) -> Result<i32> {
        Ok(self.dim as i32 - 2 * self.hamming(other)? as i32)
    }

    /// Hadamard product (XNOR of the bit patterns).
    pub fn bind(&self, other: &Self) -> Result<Self> {
        self.check_dim(other, "bind")?;
        let mut out = Self {
            dim: self.dim,
            words: self.words.iter().zip(&other.words).map(|(a, b)| !(a ^ b)).collect(),
        };
        out.clear_padding();
        Ok(out)
    }

    pub fn negated(&self) -> Self {
        let mut out = Self {
            dim: self.dim,
            words: self.words.iter().map(|w| !w).collect(),
        };
        out.clear_padding();
        out
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.dim).map(|i| self.get(i)).collect()
    }

    /// Appends the packed byte form to `out`.
    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        let n = packed_len(self.dim);
        let mut written = 0;
        for w in &self.words {
            for b in w.to_le_bytes() {
                if written == n {
                    return;
                }
                out.push(b);
                written += 1;
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(packed_len(self.dim));
        self.write_bytes(&mut out);
        out
    }

    /// Parses the packed byte form; padding bits must be zero.
    pub fn from_bytes(dim: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != packed_len(dim) {
            return Err(Error::Format(format!(
                "packed bipolar row of dim {dim} needs {} bytes, got {}",
                packed_len(dim),
                bytes.len()
            )));
        }
        let mut words = vec![0u64; word_count(dim)];
        for (k, &b) in bytes.iter().enumerate() {
            words[k / 8] |= (b as u64) << (8 * (k % 8));
        }
        let v = Self { dim, words };
        let mut cleared = v.clone();
        cleared.clear_padding();
        if cleared != v {
            return Err(Error::Format("non-zero padding bits in packed bipolar row".into()));
        }
        Ok(v)
    }
}

/// Spreads bit `j` of a byte into byte lane `j` of a `u64`.
const fn spread_table() -> [u64; 256] {
    let mut table = [0u64; 256];
    let mut b = 0;
    while b < 256 {
        let mut lane = 0;
        let mut v = 0u64;
        while lane < 8 {
            if (b >> lane) & 1 == 1 {
                v |= 1 << (8 * lane);
            }
            lane += 1;
        }
        table[b] = v;
        b += 1;
    }
    table
}

static SPREAD: [u64; 256] = spread_table();

/// Integer bundling of bound bipolar pairs without unpacking to integers.
///
/// Each `u64` lane holds eight 8-bit counters of `+1` entries; lanes spill
/// into 32-bit totals every 255 additions.
#[derive(Clone, Debug)]
pub struct BundleAccumulator {
    dim: usize,
    lanes: Vec<u64>,
    totals: Vec<u32>,
    pending: u32,
    added: u32,
}

impl BundleAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            lanes: vec![0; word_count(dim) * 8],
            totals: vec![0; word_count(dim) * 64],
            pending: 0,
            added: 0,
        }
    }

    pub fn reset(&mut self) {
        self.lanes.iter_mut().for_each(|l| *l = 0);
        self.totals.iter_mut().for_each(|t| *t = 0);
        self.pending = 0;
        self.added = 0;
    }

    fn add_word(&mut self, w: usize, word: u64) {
        for (b, byte) in word.to_le_bytes().into_iter().enumerate() {
            self.lanes[w * 8 + b] += SPREAD[byte as usize];
        }
    }

    fn bump(&mut self) {
        self.added += 1;
        self.pending += 1;
        if self.pending == 255 {
            self.spill();
        }
    }

    fn spill(&mut self) {
        for (k, lane) in self.lanes.iter_mut().enumerate() {
            for (j, c) in lane.to_le_bytes().into_iter().enumerate() {
                self.totals[k * 8 + j] += c as u32;
            }
            *lane = 0;
        }
        self.pending = 0;
    }

    /// Adds `a ⊙ b`.
    pub fn add_bound(&mut self, a: &BipolarVector, b: &BipolarVector) {
        debug_assert!(a.dim == self.dim && b.dim == self.dim);
        for w in 0..a.words.len() {
            self.add_word(w, !(a.words[w] ^ b.words[w]));
        }
        self.bump();
    }

    pub fn add(&mut self, a: &BipolarVector) {
        debug_assert!(a.dim == self.dim);
        for w in 0..a.words.len() {
            self.add_word(w, a.words[w]);
        }
        self.bump();
    }

    /// Number of vectors added so far.
    pub fn added(&self) -> u32 {
        self.added
    }

    /// Count of `+1` entries per dimension over everything added.
    pub fn counts(&mut self) -> &[u32] {
        self.spill();
        &self.totals[..self.dim]
    }

    /// Integer sums `Σ (±1)` per dimension.
    pub fn sums(&mut self) -> Vec<i32> {
        self.spill();
        let n = self.added as i32;
        (0..self.dim).map(|d| 2 * self.totals[d] as i32 - n).collect()
    }

    /// `sign(Σ)` with `sign(0) = +1`; padding counters are ignored.
    pub fn sign(&mut self) -> BipolarVector {
        self.spill();
        let n = self.added;
        BipolarVector::from_fn(self.dim, |d| 2 * self.totals[d] >= n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use proptest::prelude::*;

    #[test]
    fn packing_layout() {
        let v = BipolarVector::from_signs(&[1, -1, -1, 1, -1, -1, -1, -1, 1]).unwrap();
        assert_eq!(v.to_bytes(), vec![0b0000_1001, 0b0000_0001]);
        assert_eq!(packed_len(9), 2);
    }

    #[test]
    fn padding_must_be_zero() {
        assert!(BipolarVector::from_bytes(3, &[0b1111_0000]).is_err());
        assert!(BipolarVector::from_bytes(3, &[0b0000_0101]).is_ok());
        assert!(BipolarVector::from_bytes(9, &[0]).is_err());
    }

    #[test]
    fn sign_zero_is_positive() {
        let v = BipolarVector::from_reals(&[0.0f32, -0.5, 2.0]);
        assert_eq!(v.to_signs(), vec![1, -1, 1]);
        assert_eq!(BipolarVector::from_ints(&[0, -3]).to_signs(), vec![1, -1]);
    }

    #[test]
    fn dot_and_hamming_hand_case() {
        let a = BipolarVector::from_signs(&[1, 1, -1, -1]).unwrap();
        let b = BipolarVector::from_signs(&[1, -1, -1, 1]).unwrap();
        assert_eq!(a.dot(&b).unwrap(), 0);
        assert_eq!(a.hamming(&b).unwrap(), 2);
        assert_eq!(a.dot(&a).unwrap(), 4);
        assert_eq!(a.dot(&a.negated()).unwrap(), -4);
    }

    #[test]
    fn accumulator_spills_past_255() {
        let mut rng = seeded_rng(5);
        let dim = 70;
        let vs: Vec<_> = (0..600).map(|_| BipolarVector::random(dim, &mut rng)).collect();
        let mut acc = BundleAccumulator::new(dim);
        let mut naive = vec![0i32; dim];
        for pair in vs.chunks(2) {
            acc.add_bound(&pair[0], &pair[1]);
            for d in 0..dim {
                naive[d] += (pair[0].get(d) * pair[1].get(d)) as i32;
            }
        }
        assert_eq!(acc.sums(), naive);
        assert_eq!(acc.sign(), BipolarVector::from_ints(&naive));
    }

    fn signs(dim: usize) -> impl Strategy<Value = Vec<i8>> {
        prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1i8 } else { -1 }), dim)
    }

    proptest! {
        #[test]
        fn byte_round_trip(s in (1usize..200).prop_flat_map(signs)) {
            let v = BipolarVector::from_signs(&s).unwrap();
            let back = BipolarVector::from_bytes(s.len(), &v.to_bytes()).unwrap();
            prop_assert_eq!(back.to_signs(), s);
        }

        #[test]
        fn dot_matches_naive(pair in (1usize..300).prop_flat_map(|d| (signs(d), signs(d)))) {
            let (a, b) = pair;
            let naive: i32 = a.iter().zip(&b).map(|(x, y)| (*x as i32) * (*y as i32)).sum();
            let va = BipolarVector::from_signs(&a).unwrap();
            let vb = BipolarVector::from_signs(&b).unwrap();
            prop_assert_eq!(va.dot(&vb).unwrap(), naive);
            let bound = va.bind(&vb).unwrap().to_signs();
            let expect: Vec<i8> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
            prop_assert_eq!(bound, expect);
        }
    }
}
