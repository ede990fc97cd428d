use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::builders::cot::CotMlp;
use crate::builders::depth::DepthMlp;
use crate::builders::encoder::EncoderMlp;
use crate::numerics::{quantize_scaled, FixedFormat, QuantCtx};
use crate::{Error, Result};

/// Named per-position programs `g: y ↦ x`. All are pure functions of the
/// attention output at one position (and, for overrides, of the position).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum MlpProgram {
    Identity,
    /// `x = W y + b`, computed exactly and rounded once.
    Affine { weight: Matrix, bias: Vec<i64> },
    /// `x = W2 relu(W1 y + b1) + b2`, computed exactly and rounded once.
    TwoLayerRelu {
        w1: Matrix,
        b1: Vec<i64>,
        w2: Matrix,
        b2: Vec<i64>,
    },
    DepthSolver(DepthMlp),
    CotSolver(CotMlp),
    EncoderSolver(EncoderMlp),
}

impl MlpProgram {
    pub fn check_width(&self, width: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Spec(format!("{what} does not match width {width}")));
        match self {
            MlpProgram::Affine { weight, bias } => {
                if weight.shape() != (width, width) || bias.len() != width {
                    return bad("affine weight/bias shape");
                }
            }
            MlpProgram::TwoLayerRelu { w1, b1, w2, b2 } => {
                let hidden = w1.rows();
                if w1.cols() != width || b1.len() != hidden || w2.shape() != (width, hidden) || b2.len() != width {
                    return bad("two-layer shapes");
                }
            }
            MlpProgram::DepthSolver(p) if p.layout.width != width => return bad("depth-solver layout"),
            MlpProgram::CotSolver(p) if p.layout.width != width => return bad("cot-solver layout"),
            MlpProgram::EncoderSolver(p) if p.layout.width != width => return bad("encoder-solver layout"),
            _ => {}
        }
        Ok(())
    }

    pub fn apply(&self, y: &[i64], _position: usize, fmt: FixedFormat, ctx: &mut QuantCtx) -> Result<Vec<i64>> {
        match self {
            MlpProgram::Identity => Ok(y.to_vec()),
            MlpProgram::Affine { weight, bias } => {
                let f = fmt.frac_bits;
                let wy = weight.mul_vec(y)?;
                wy.iter()
                    .zip(bias)
                    .map(|(&a, &b)| {
                        let v = a
                            .checked_add((b as i128) << f)
                            .ok_or(Error::Overflow("affine MLP"))?;
                        Ok(quantize_scaled(v, 2 * f, fmt, ctx))
                    })
                    .collect()
            }
            MlpProgram::TwoLayerRelu { w1, b1, w2, b2 } => {
                let f = fmt.frac_bits;
                let pre = w1.mul_vec(y)?;
                let hidden: Vec<i128> = pre
                    .iter()
                    .zip(b1)
                    .map(|(&a, &b)| {
                        a.checked_add((b as i128) << f)
                            .map(|v| v.max(0))
                            .ok_or(Error::Overflow("two-layer MLP"))
                    })
                    .collect::<Result<_>>()?;
                // Hidden units stay at scale 2^-2f.
                let mut out = vec![0i128; w2.rows()];
                for (r, c, w) in w2.nonzeros() {
                    let prod = (w as i128)
                        .checked_mul(hidden[c])
                        .ok_or(Error::Overflow("two-layer MLP"))?;
                    out[r] = out[r].checked_add(prod).ok_or(Error::Overflow("two-layer MLP"))?;
                }
                out.iter()
                    .zip(b2)
                    .map(|(&a, &b)| {
                        let v = a
                            .checked_add((b as i128) << (2 * f))
                            .ok_or(Error::Overflow("two-layer MLP"))?;
                        Ok(quantize_scaled(v, 3 * f, fmt, ctx))
                    })
                    .collect()
            }
            MlpProgram::DepthSolver(p) => Ok(p.apply(y, fmt, ctx)),
            MlpProgram::CotSolver(p) => Ok(p.apply(y, fmt, ctx)),
            MlpProgram::EncoderSolver(p) => Ok(p.apply(y, fmt, ctx)),
        }
    }
}

/// Nearest integer to a stored value, ties to even.
pub fn round_to_int(raw: i64, fmt: FixedFormat) -> i64 {
    div_round(raw, 1i64 << fmt.frac_bits).unwrap_or(0)
}

/// `a / b` rounded to nearest, ties to even; `None` when `b = 0`.
pub fn div_round(a: i64, b: i64) -> Option<i64> {
    if b == 0 {
        return None;
    }
    let (a, b) = if b < 0 { (-(a as i128), -(b as i128)) } else { (a as i128, b as i128) };
    let q = a.div_euclid(b);
    let r = a.rem_euclid(b);
    let q = match (2 * r).cmp(&b) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    };
    Some(q as i64)
}

/// Stores an integer, saturating if it does not fit.
pub fn store_int(v: i64, fmt: FixedFormat, ctx: &mut QuantCtx) -> i64 {
    quantize_scaled(v as i128, 0, fmt, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn division_rounds_half_to_even() {
        assert_eq!(div_round(5, 2), Some(2));
        assert_eq!(div_round(7, 2), Some(4));
        assert_eq!(div_round(-5, 2), Some(-2));
        assert_eq!(div_round(10, -4), Some(-2));
        assert_eq!(div_round(1, 0), None);
    }

    #[test]
    fn two_layer_relu_is_exact() {
        let fmt = FixedFormat::new(8, 4).unwrap();
        let one = 1 << 4;
        // hidden = relu(y0 - 1), out0 = 2·hidden, out1 = y1.
        let w1 = Matrix::from_dense(&[vec![one, 0]]).unwrap();
        let w2 = Matrix::from_dense(&[vec![2 * one], vec![0]]).unwrap();
        let prog = MlpProgram::TwoLayerRelu {
            w1,
            b1: vec![-one],
            w2,
            b2: vec![0, 3 * one],
        };
        let mut ctx = QuantCtx::default();
        let out = prog.apply(&[3 * one + 8, 0], 0, fmt, &mut ctx).unwrap();
        assert_eq!(out, vec![5 * one, 3 * one]);
        let out = prog.apply(&[0, 0], 0, fmt, &mut ctx).unwrap();
        assert_eq!(out, vec![0, 3 * one]);
    }
}
