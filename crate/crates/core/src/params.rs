//! Exact parameter schedules for the decoder lower bound.
//!
//! Every quantity here is a big integer (or an exact rational where a
//! negative power of eight is involved). Nothing is ever rounded, so the
//! inequality chain can be checked for concrete `(H, d, p, L)` exactly.

use std::cmp::Ordering;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::canonical::big_decimal;
use crate::{Error, Result};

/// Size limit (in bits) for the largest schedule entry we are willing to
/// materialise.
const MAX_SCHEDULE_BITS: u64 = 1 << 26;

/// Shape of a transformer: heads, head dimension, precision and layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    #[serde(rename = "H")]
    pub h: u64,
    pub d: u64,
    pub p: u64,
    #[serde(rename = "L")]
    pub l: u64,
}

impl ModelDims {
    pub fn new(h: u64, d: u64, p: u64, l: u64) -> Result<Self> {
        let dims = Self { h, d, p, l };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("H", self.h), ("d", self.d), ("p", self.p), ("L", self.l)] {
            if v == 0 {
                return Err(Error::InvalidParams(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// The product `H·d·p`, i.e. the per-token message budget `B`.
    pub fn hdp(&self) -> u64 {
        self.h * self.d * self.p
    }
}

/// The exact parameter schedule for one `ModelDims`.
///
/// Lists follow the natural index ranges: `n` holds `n_1..n_{L-1}`, `big_n`
/// holds `N_0..N_{L-1}`, `x` holds `x_0..x_{L-1}`, `theta` holds
/// `Θ_1..Θ_{L-1}` and `log2_delta` holds `log2 Δ_2..log2 Δ_L`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(rename = "K", with = "big_decimal")]
    pub k: BigUint,
    #[serde(rename = "sqrtK", with = "big_decimal")]
    pub sqrt_k: BigUint,
    #[serde(with = "big_decimal")]
    pub m: BigUint,
    #[serde(with = "big_decimal::vec")]
    pub n: Vec<BigUint>,
    #[serde(rename = "N", with = "big_decimal::vec")]
    pub big_n: Vec<BigUint>,
    #[serde(with = "big_decimal::vec")]
    pub x: Vec<BigUint>,
    #[serde(rename = "Theta", with = "rational_vec")]
    pub theta: Vec<BigRational>,
    #[serde(rename = "log2Delta", with = "big_decimal::vec")]
    pub log2_delta: Vec<BigUint>,
}

impl Schedule {
    /// `n_ℓ` for `ℓ ∈ [1, L-1]`.
    pub fn n_at(&self, l: usize) -> &BigUint {
        &self.n[l - 1]
    }

    /// `Θ_ℓ` for `ℓ ∈ [1, L-1]`.
    pub fn theta_at(&self, l: usize) -> &BigRational {
        &self.theta[l - 1]
    }

    /// `log2 Δ_ℓ` for `ℓ ∈ [2, L]`.
    pub fn log2_delta_at(&self, l: usize) -> &BigUint {
        &self.log2_delta[l - 2]
    }

    /// Prompt length `Σ_{ℓ∈[L]} N_{ℓ-1} + 2`.
    pub fn prompt_length(&self) -> BigUint {
        self.big_n.iter().sum::<BigUint>() + 2u32
    }
}

fn pow8(e: u64) -> BigUint {
    BigUint::one() << (3 * e)
}

fn pow_big(base: &BigUint, e: u64) -> Result<BigUint> {
    let e32 = u32::try_from(e).map_err(|_| Error::Unsupported(format!("exponent {e} too large")))?;
    Ok(base.pow(e32))
}

fn product<'a>(it: impl IntoIterator<Item = &'a BigUint>) -> BigUint {
    it.into_iter().fold(BigUint::one(), |acc, v| acc * v)
}

/// Computes `K, √K, m, n_ℓ, N_ℓ, x_ℓ, Θ_ℓ, log2 Δ_ℓ` exactly.
pub fn compute_schedule(dims: ModelDims) -> Result<Schedule> {
    dims.validate()?;
    let l = dims.l;
    let base = BigUint::from(dims.h) * dims.d * dims.p * l;

    // Σ_{ℓ∈[0:L-1]} 8^ℓ, the exponent of K inside m (before the +1).
    let geometric: u64 = (0..l)
        .map(|e| 8u64.checked_pow(e as u32))
        .try_fold(0u64, |acc, v| v.and_then(|v| acc.checked_add(v)))
        .ok_or_else(|| Error::Unsupported(format!("L = {l} overflows the exponent range")))?;

    let k_bits = 8 * (base.bits() + 1) + 6 * l * l;
    if k_bits.saturating_mul(geometric + 1) > MAX_SCHEDULE_BITS {
        return Err(Error::Unsupported(format!(
            "schedule for {dims:?} needs roughly {} bits per entry",
            k_bits.saturating_mul(geometric + 1)
        )));
    }

    let sqrt_k = pow_big(&base, 4)? * pow8(l * l);
    let k = pow_big(&base, 8)? * pow8(2 * l * l);
    let m = pow_big(&k, geometric + 1)?;

    let n: Vec<BigUint> = (1..l)
        .map(|ell| pow_big(&k, 4 * 8u64.pow((l - ell - 1) as u32)))
        .collect::<Result<_>>()?;

    let mut big_n = Vec::with_capacity(l as usize);
    big_n.push(m.clone());
    for ell in 1..l as usize {
        let next = &big_n[ell - 1] * &n[ell - 1];
        big_n.push(next);
    }

    let x: Vec<BigUint> = (0..l)
        .map(|ell| pow_big(&k, 8u64.pow((l - ell - 1) as u32)))
        .collect::<Result<_>>()?;

    let theta: Vec<BigRational> = (1..l as usize)
        .map(|ell| {
            let num = product(&x[..=ell]) * product(&n[..ell - 1]);
            let den = pow8(l * ell as u64);
            BigRational::new(BigInt::from(num), BigInt::from(den))
        })
        .collect();

    let n_all = product(&n);
    let log2_delta: Vec<BigUint> = (2..=l as usize)
        .map(|ell| (&sqrt_k << 2u32) * product(&x[..ell - 1]) * &n_all)
        .collect();

    Ok(Schedule {
        k,
        sqrt_k,
        m,
        n,
        big_n,
        x,
        theta,
        log2_delta,
    })
}

/// One exactly-evaluated comparison, with both operands kept for diagnosis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub lhs: String,
    pub comparator: String,
    pub rhs: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    #[serde(rename = "promptLength", with = "big_decimal")]
    pub prompt_length: BigUint,
    #[serde(rename = "thresholdHolds")]
    pub threshold_holds: bool,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Copy)]
enum Cmp {
    Lt,
    Le,
    Eq,
}

impl Cmp {
    fn symbol(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Eq => "==",
        }
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            Cmp::Lt => ord == Ordering::Less,
            Cmp::Le => ord != Ordering::Greater,
            Cmp::Eq => ord == Ordering::Equal,
        }
    }
}

fn rational_string(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_str_radix(10)
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn check_rat(name: &str, lhs: &BigRational, cmp: Cmp, rhs: &BigRational) -> Check {
    Check {
        name: name.to_string(),
        lhs: rational_string(lhs),
        comparator: cmp.symbol().to_string(),
        rhs: rational_string(rhs),
        pass: cmp.holds(lhs.cmp(rhs)),
    }
}

fn rat(v: &BigUint) -> BigRational {
    BigRational::from_integer(BigInt::from(v.clone()))
}

/// Checks `(Hdp)^(2^(4L)) ≤ n` exactly, without materialising the left side
/// when it obviously exceeds `n`.
fn threshold_check(hdp: u64, l: u64, n: &BigUint) -> Result<Check> {
    let exp_desc = format!("{hdp}^(2^{})", 4 * l);
    let (lhs, pass) = if hdp == 1 {
        ("1".to_string(), true)
    } else {
        // hdp ≥ 2 so the power is at least 2^(2^(4L)).
        let exponent_log2 = 4 * l;
        if exponent_log2 >= 63 || (1u64 << exponent_log2) > n.bits() {
            (format!("{exp_desc} (exceeds 2^{})", n.bits()), false)
        } else {
            let e = 1u64 << exponent_log2;
            let v = pow_big(&BigUint::from(hdp), e)?;
            let pass = &v <= n;
            (v.to_str_radix(10), pass)
        }
    };
    Ok(Check {
        name: "prompt_threshold".to_string(),
        lhs,
        comparator: Cmp::Le.symbol().to_string(),
        rhs: n.to_str_radix(10),
        pass,
    })
}

/// Evaluates the inequality chain used to turn an indistinguishable
/// decomposition into a wrong answer, plus the prompt-length threshold.
///
/// Requires `L ≥ 2`: the chain refers to `Δ_L` and `Θ_{L-1}`.
pub fn verify_lower_bound_arithmetic(s: &Schedule, dims: ModelDims) -> Result<VerifyReport> {
    dims.validate()?;
    let l = dims.l as usize;
    if l < 2 {
        return Err(Error::Unsupported(format!(
            "the inequality chain needs L >= 2, got L = {l}"
        )));
    }
    if s.big_n.len() != l {
        return Err(Error::InvalidParams(format!(
            "schedule has {} layers but dims say L = {l}",
            s.big_n.len()
        )));
    }

    let x_all = product(&s.x);
    let n_all = product(&s.n);
    let eight_l2 = pow8((l * l) as u64);

    // 8^(-L²)·(x_0···x_{L-1})·(n_1···n_{L-1}), the entropy exponent.
    let entropy_exp = BigRational::new(
        BigInt::from(&x_all * &n_all),
        BigInt::from(eight_l2.clone()),
    );
    let log2_delta_l = rat(s.log2_delta_at(l));
    let n_last = s.n_at(l - 1);
    let theta_last = s.theta_at(l - 1);
    let cover_exp = rat(n_last) * theta_last;

    let n_final = &s.big_n[l - 1];
    let mut checks = vec![
        check_rat(
            "delta_below_entropy_exponent",
            &log2_delta_l,
            Cmp::Lt,
            &entropy_exp,
        ),
        check_rat(
            "entropy_exponent_within_cover",
            &entropy_exp,
            Cmp::Le,
            &cover_exp,
        ),
        check_rat(
            "last_domain_at_least_two",
            &BigRational::from_integer(BigInt::from(2)),
            Cmp::Le,
            &rat(n_final),
        ),
        check_rat(
            "cover_threshold_attainable",
            theta_last,
            Cmp::Le,
            &rat(&s.big_n[l - 2]),
        ),
        check_rat(
            "delta_below_domain_entropy",
            &log2_delta_l,
            Cmp::Le,
            &rat(&(n_final * BigUint::from(n_final.bits() - 1))),
        ),
        check_rat(
            "sqrt_k_squared",
            &rat(&(&s.sqrt_k * &s.sqrt_k)),
            Cmp::Eq,
            &rat(&s.k),
        ),
        check_rat(
            "final_domain_product",
            &rat(n_final),
            Cmp::Eq,
            &rat(&(&s.m * &n_all)),
        ),
    ];

    let prompt_length = s.prompt_length();
    let threshold = threshold_check(dims.hdp(), dims.l, &prompt_length)?;
    let threshold_holds = threshold.pass;
    checks.push(threshold);
    checks.sort_by(|a, b| a.name.cmp(&b.name));

    Ok(VerifyReport {
        checks,
        prompt_length,
        threshold_holds,
    })
}

/// Approximate `log2` of a big integer, for human-facing summaries only.
pub fn approx_log2(v: &BigUint) -> f64 {
    let bits = v.bits();
    if bits <= 52 {
        return v.to_f64().map(f64::log2).unwrap_or(0.0);
    }
    let shift = bits - 52;
    let top = (v >> shift).to_f64().unwrap_or(0.0);
    top.log2() + shift as f64
}

mod rational_vec {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|r| format!("{}/{}", r.numer(), r.denom())))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigRational>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.into_iter()
            .map(|s| {
                let (num, den) = s
                    .split_once('/')
                    .ok_or_else(|| serde::de::Error::custom(format!("not a fraction: {s}")))?;
                let parse = |t: &str| {
                    BigInt::parse_bytes(t.as_bytes(), 10)
                        .ok_or_else(|| serde::de::Error::custom(format!("bad integer: {t}")))
                };
                let den = parse(den)?;
                if den == BigInt::from(0) {
                    return Err(serde::de::Error::custom("zero denominator"));
                }
                Ok(BigRational::new(parse(num)?, den))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn big(v: u64) -> BigUint {
        BigUint::from(v)
    }

    #[test]
    fn l1_schedule_by_hand() {
        let s = compute_schedule(ModelDims::new(1, 1, 1, 1).unwrap()).unwrap();
        // K = 1^8 · 8^2, m = K^(8^0 + 1).
        assert_eq!(s.k, big(64));
        assert_eq!(s.sqrt_k, big(8));
        assert_eq!(s.m, big(4096));
        assert_eq!(s.big_n, vec![big(4096)]);
        assert!(s.n.is_empty());
        assert!(s.theta.is_empty());
        assert!(s.log2_delta.is_empty());
        assert_eq!(s.x, vec![big(64)]);
    }

    #[test]
    fn l2_schedule_by_hand() {
        let s = compute_schedule(ModelDims::new(1, 1, 1, 2).unwrap()).unwrap();
        let k = big(1) << 32u32;
        assert_eq!(s.k, k);
        assert_eq!(s.sqrt_k, big(65536));
        assert_eq!(s.n, vec![k.pow(4)]);
        assert_eq!(s.m, k.pow(10));
        assert_eq!(s.x, vec![k.pow(8), k.clone()]);
        assert_eq!(s.big_n, vec![k.pow(10), k.pow(14)]);
        // Θ_1 = 8^(-2)·x_0·x_1.
        assert_eq!(
            s.theta[0],
            BigRational::new(BigInt::from(k.pow(9)), BigInt::from(64))
        );
        // log2 Δ_2 = 4·√K·x_0·n_1.
        assert_eq!(s.log2_delta[0], big(4) * big(65536) * k.pow(12));
    }

    #[test]
    fn l1_is_rejected_by_verifier() {
        let dims = ModelDims::new(1, 1, 1, 1).unwrap();
        let s = compute_schedule(dims).unwrap();
        assert!(matches!(
            verify_lower_bound_arithmetic(&s, dims),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(ModelDims::new(1, 0, 1, 1).is_err());
        assert!(ModelDims::new(1, 1, 1, 0).is_err());
    }

    #[test]
    fn threshold_without_materialising() {
        let n = BigUint::from(1000u32);
        let c = threshold_check(2, 3, &n).unwrap();
        assert!(!c.pass);
        let c = threshold_check(1, 3, &n).unwrap();
        assert!(c.pass);
    }

    #[test]
    fn huge_schedules_are_refused() {
        let dims = ModelDims::new(1, 1, 1, 9).unwrap();
        assert!(matches!(compute_schedule(dims), Err(Error::Unsupported(_))));
    }
}
