//! Exact summation of many `mantissa · 2^exp` terms without per-term
//! allocation. The running value is kept in signed 64-bit limbs stored in
//! `i128`s so carries can be deferred until [`Accumulator::finish`].

use num_bigint::BigInt;

use super::Dyadic;

#[derive(Clone, Debug, Default)]
pub struct Accumulator {
    /// Exponent of bit 0 of `limbs[0]`.
    base: i64,
    limbs: Vec<i128>,
    /// Additions since the last carry pass.
    pending: u32,
}

/// Limbs absorb this many additions of 64-bit chunks before carrying.
const CARRY_EVERY: u32 = 1 << 30;

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.limbs.is_empty()
    }

    /// Adds `mant · v · 2^exp` where `mant < 2^64`.
    pub fn add_product(&mut self, mant: u64, exp: i64, v: i128) {
        if mant == 0 || v == 0 {
            return;
        }
        let neg = v < 0;
        let mag = v.unsigned_abs();
        let lo = (mag as u64) as u128 * mant as u128;
        let hi = (mag >> 64) as u128 * mant as u128;
        // 192-bit product as three 64-bit words.
        let w0 = lo as u64;
        let mid = (lo >> 64) + (hi as u64) as u128;
        let w1 = mid as u64;
        let w2 = ((mid >> 64) + (hi >> 64)) as u64;
        self.add_words([w0, w1, w2], exp, neg);
    }

    /// Adds `mant · 2^exp`.
    pub fn add_scaled(&mut self, mant: u64, exp: i64) {
        if mant != 0 {
            self.add_words([mant, 0, 0], exp, false);
        }
    }

    fn add_words(&mut self, words: [u64; 3], exp: i64, neg: bool) {
        if self.limbs.is_empty() {
            self.base = exp.div_euclid(64) * 64;
        } else if exp < self.base {
            let new_base = exp.div_euclid(64) * 64;
            let grow = ((self.base - new_base) / 64) as usize;
            self.limbs.splice(0..0, std::iter::repeat_n(0, grow));
            self.base = new_base;
        }
        let off = (exp - self.base) as u64;
        let idx = (off / 64) as usize;
        let sh = (off % 64) as u32;
        let mut shifted = [0u64; 4];
        if sh == 0 {
            shifted[..3].copy_from_slice(&words);
        } else {
            shifted[0] = words[0] << sh;
            shifted[1] = (words[1] << sh) | (words[0] >> (64 - sh));
            shifted[2] = (words[2] << sh) | (words[1] >> (64 - sh));
            shifted[3] = words[2] >> (64 - sh);
        }
        if self.limbs.len() < idx + 4 {
            self.limbs.resize(idx + 4, 0);
        }
        for (k, w) in shifted.iter().enumerate() {
            if *w != 0 {
                let w = *w as i128;
                self.limbs[idx + k] += if neg { -w } else { w };
            }
        }
        self.pending += 1;
        if self.pending >= CARRY_EVERY {
            self.carry();
        }
    }

    fn carry(&mut self) {
        let mut carry = 0i128;
        for limb in self.limbs.iter_mut() {
            let v = *limb + carry;
            let low = v & 0xFFFF_FFFF_FFFF_FFFF;
            carry = (v - low) >> 64;
            *limb = low;
        }
        if carry != 0 {
            self.limbs.push(carry);
        }
        self.pending = 0;
    }

    /// Adds every term of `other`.
    pub fn merge(&mut self, other: &Accumulator) {
        for (k, &limb) in other.limbs.iter().enumerate() {
            if limb == 0 {
                continue;
            }
            let exp = other.base + 64 * k as i64;
            let neg = limb < 0;
            let mag = limb.unsigned_abs();
            self.add_words([mag as u64, (mag >> 64) as u64, 0], exp, neg);
        }
    }

    /// The exact sum.
    pub fn finish(&self) -> Dyadic {
        let mut total = BigInt::from(0);
        for &limb in self.limbs.iter().rev() {
            total = (total << 64u32) + BigInt::from(limb);
        }
        Dyadic::new(total, self.base)
    }
}
