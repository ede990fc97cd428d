use num_rational::BigRational;

use super::exp::exp_rational;
use crate::{Error, Result};

/// Exact-stage softmax: `e^(s_k - max) / Σ_j e^(s_j - max)` where each
/// exponential carries relative error below `2^-62` and the division is
/// exact. Subtracting the maximum does not change the weights.
pub fn softmax_row(scores: &[BigRational]) -> Result<Vec<BigRational>> {
    let max = scores.iter().max().ok_or(Error::Empty("softmax row"))?;
    let exps = scores
        .iter()
        .map(|s| exp_rational(&(s - max)).map(|e| e.to_rational()))
        .collect::<Result<Vec<_>>>()?;
    let total: BigRational = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / &total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_traits::{One, ToPrimitive};

    fn int(v: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(v))
    }

    #[test]
    fn equal_scores_split_evenly() {
        let w = softmax_row(&[int(3), int(3), int(3)]).unwrap();
        let third = BigRational::new(BigInt::from(1), BigInt::from(3));
        assert!(w.iter().all(|x| *x == third));
    }

    #[test]
    fn single_score_gets_everything() {
        assert_eq!(softmax_row(&[int(-9)]).unwrap(), vec![BigRational::one()]);
    }

    #[test]
    fn large_gap() {
        let w = softmax_row(&[int(20), int(0)]).unwrap();
        // 1/(1+e^-20) ≈ 1 - 2.06e-9.
        assert!(w[0].to_f64().unwrap() >= 1.0 - 3e-9);
        assert_eq!(&w[0] + &w[1], BigRational::one());
    }

    #[test]
    fn empty_row_is_an_error() {
        assert!(matches!(softmax_row(&[]), Err(Error::Empty(_))));
    }
}
