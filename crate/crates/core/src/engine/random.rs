//! Seeded random decoders for differential testing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    AffineEmbed, AttentionHead, Embedder, HeadParams, Layer, Mask, Matrix, MlpProgram, Readout, TransformerSpec,
    SPEC_FORMAT_VERSION,
};
use crate::numerics::FixedFormat;
use crate::params::ModelDims;
use crate::task::TaskParams;
use crate::{Error, Result};

/// Splits `p` bits into sign, integer and fraction with the fraction
/// getting the larger half.
pub fn format_for_precision(p: u64) -> Result<FixedFormat> {
    if p < 2 {
        return Err(Error::InvalidParams("precision must be at least 2 bits".into()));
    }
    let int_bits = ((p - 1) / 2) as u32;
    FixedFormat::new(int_bits, (p - 1) as u32 - int_bits)
}

/// A causal decoder with small random weights that accepts every prompt of
/// `task`. Half the layers use a two-layer ReLU MLP, the rest an affine one.
/// The readout returns the raw final vector so equivalence checks compare
/// every bit.
pub fn random_decoder(task: &TaskParams, dims: ModelDims, seed: u64) -> Result<TransformerSpec> {
    dims.validate()?;
    let format = format_for_precision(dims.p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dims.d as usize;
    let width = (dims.h * dims.d) as usize;
    let one = 1i64 << format.frac_bits;
    let matrix = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, rng.gen_range(-one..=one));
            }
        }
        m
    };
    // Embedding features are integers, so the weights are kept small to
    // stay mostly inside the representable range.
    let mut embed_w = Matrix::zeros(width, AffineEmbed::FEATURES);
    for r in 0..width {
        for c in 0..AffineEmbed::FEATURES {
            embed_w.set(r, c, rng.gen_range(-one..=one) / 4);
        }
    }
    let max_value = task.max_domain().max(task.m).max(task.query_count());
    let embed = Embedder::Affine(AffineEmbed {
        weight: embed_w,
        max_block: task.l as i32,
        max_index: task.max_domain().max(1),
        max_value,
    });
    let mut layers = Vec::with_capacity(dims.l as usize);
    for l in 0..dims.l {
        let heads = (0..dims.h)
            .map(|_| {
                AttentionHead::new(HeadParams {
                    q: matrix(d, width, &mut rng),
                    k: matrix(d, width, &mut rng),
                    v: matrix(d, width, &mut rng),
                })
            })
            .collect();
        let bias = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.gen_range(-one..=one)).collect::<Vec<_>>();
        let mlp = if l % 2 == 0 {
            MlpProgram::TwoLayerRelu {
                w1: matrix(width, width, &mut rng),
                b1: bias(&mut rng, width),
                w2: matrix(width, width, &mut rng),
                b2: bias(&mut rng, width),
            }
        } else {
            MlpProgram::Affine {
                weight: matrix(width, width, &mut rng),
                bias: bias(&mut rng, width),
            }
        };
        layers.push(Layer::new(heads, mlp));
    }
    let spec = TransformerSpec {
        format_version: SPEC_FORMAT_VERSION,
        dims,
        format,
        mask: Mask::Causal,
        embed,
        layers,
        readout: Readout::Vector,
    };
    spec.validate()?;
    Ok(spec)
}
