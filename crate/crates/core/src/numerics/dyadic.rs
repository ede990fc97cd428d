use std::cmp::Ordering;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

/// An exact dyadic rational `mant · 2^exp`, kept normalised (odd mantissa,
/// or zero mantissa with exponent 0) so equal values compare and serialize
/// identically.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Dyadic {
    mant: BigInt,
    exp: i64,
}

impl Dyadic {
    pub fn new(mant: BigInt, exp: i64) -> Self {
        if mant.is_zero() {
            return Self { mant, exp: 0 };
        }
        let tz = mant.trailing_zeros().unwrap_or(0);
        Self {
            mant: mant >> tz,
            exp: exp + tz as i64,
        }
    }

    pub fn from_int(v: i128) -> Self {
        Self::new(BigInt::from(v), 0)
    }

    /// `raw · 2^-scale_bits`.
    pub fn from_scaled(raw: i128, scale_bits: u32) -> Self {
        Self::new(BigInt::from(raw), -(scale_bits as i64))
    }

    pub fn mantissa(&self) -> &BigInt {
        &self.mant
    }

    pub fn exponent(&self) -> i64 {
        self.exp
    }

    pub fn is_negative(&self) -> bool {
        self.mant.is_negative()
    }

    pub fn to_rational(&self) -> BigRational {
        if self.exp >= 0 {
            BigRational::from_integer(&self.mant << self.exp as u64)
        } else {
            BigRational::new(self.mant.clone(), BigInt::from(1) << (-self.exp) as u64)
        }
    }

    /// Integer numerator and denominator of `self / other · 2^shift`.
    pub(crate) fn ratio_parts(&self, other: &Dyadic, shift: i64) -> (BigInt, BigInt) {
        let e = self.exp - other.exp + shift;
        if e >= 0 {
            (&self.mant << e as u64, other.mant.clone())
        } else {
            (self.mant.clone(), &other.mant << (-e) as u64)
        }
    }

    pub fn mul_int(&self, v: i128) -> Dyadic {
        Dyadic::new(&self.mant * BigInt::from(v), self.exp)
    }

    /// Canonical text form `mant*2^exp`, used for transcript bytes.
    pub fn canonical(&self) -> String {
        format!("{}*2^{}", self.mant, self.exp)
    }

    /// Number of bits needed to write the mantissa and exponent.
    pub fn bit_size(&self) -> u64 {
        self.mant.bits() + 1 + (64 - self.exp.unsigned_abs().leading_zeros() as u64) + 1
    }
}

impl Add<&Dyadic> for &Dyadic {
    type Output = Dyadic;

    fn add(self, rhs: &Dyadic) -> Dyadic {
        if self.mant.is_zero() {
            return rhs.clone();
        }
        if rhs.mant.is_zero() {
            return self.clone();
        }
        let e = self.exp.min(rhs.exp);
        let a = &self.mant << (self.exp - e) as u64;
        let b = &rhs.mant << (rhs.exp - e) as u64;
        Dyadic::new(a + b, e)
    }
}

impl Add for Dyadic {
    type Output = Dyadic;

    fn add(self, rhs: Dyadic) -> Dyadic {
        &self + &rhs
    }
}

impl Neg for &Dyadic {
    type Output = Dyadic;

    fn neg(self) -> Dyadic {
        Dyadic {
            mant: -&self.mant,
            exp: self.exp,
        }
    }
}

impl Sub<&Dyadic> for &Dyadic {
    type Output = Dyadic;

    fn sub(self, rhs: &Dyadic) -> Dyadic {
        self + &(-rhs)
    }
}

impl Mul<&Dyadic> for &Dyadic {
    type Output = Dyadic;

    fn mul(self, rhs: &Dyadic) -> Dyadic {
        Dyadic::new(&self.mant * &rhs.mant, self.exp + rhs.exp)
    }
}

impl Mul for Dyadic {
    type Output = Dyadic;

    fn mul(self, rhs: Dyadic) -> Dyadic {
        &self * &rhs
    }
}

impl std::iter::Sum for Dyadic {
    fn sum<I: Iterator<Item = Dyadic>>(iter: I) -> Dyadic {
        iter.fold(Dyadic::from_int(0), |acc, v| &acc + &v)
    }
}

impl<'a> std::iter::Sum<&'a Dyadic> for Dyadic {
    fn sum<I: Iterator<Item = &'a Dyadic>>(iter: I) -> Dyadic {
        iter.fold(Dyadic::from_int(0), |acc, v| &acc + v)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let e = self.exp.min(other.exp);
        let lhs = &self.mant << (self.exp - e) as u64;
        let rhs = &other.mant << (other.exp - e) as u64;
        lhs.cmp(&rhs)
    }
}

#[derive(Serialize, Deserialize)]
struct DyadicRepr {
    mant: String,
    exp: i64,
}

impl Serialize for Dyadic {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DyadicRepr {
            mant: self.mant.to_str_radix(10),
            exp: self.exp,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dyadic {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = DyadicRepr::deserialize(d)?;
        let mant = BigInt::parse_bytes(r.mant.as_bytes(), 10)
            .ok_or_else(|| serde::de::Error::custom(format!("bad mantissa {}", r.mant)))?;
        Ok(Dyadic::new(mant, r.exp))
    }
}
