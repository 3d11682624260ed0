//! Frame-token transformer encoder and scalar readout.
//!
//! Tokens are frames: `[B, T, W]` values with one `W`-wide vector per frame.

use super::config::{ModelConfig, Readout};
use super::mask::FrameMask;
use super::params::Bound;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sinusoidal table `[len, d]`: even columns `sin(x / 10000^(2i/d))`, odd
/// columns the matching cosine.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Result<Tensor<T>> {
    if d % 2 != 0 {
        return Err(Error::Config(format!("positional encoding width {d} must be even")));
    }
    Ok(Tensor::from_fn([len, d], |idx| {
        let (x, col) = ((idx / d) as f64, idx % d);
        let i = (col / 2) as f64;
        let angle = x / 10000f64.powf(2.0 * i / d as f64);
        T::lit(if col % 2 == 0 { angle.sin() } else { angle.cos() })
    }))
}

/// Projection weights of one attention head, each `[W, head_dim]`.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

/// Scaled dot-product self-attention over frames, one pass per head, heads
/// concatenated and mixed by `wo: [heads * head_dim, W_out]`. Padded frames
/// are never attended to.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    heads: &[HeadVars],
    wo: Var,
    mask: &FrameMask<T>,
) -> Result<Var> {
    let keep = mask.attention_keep()?;
    let mut outs = Vec::with_capacity(heads.len());
    for h in heads {
        let q = tape.matmul(z, h.wq)?;
        let k = tape.matmul(z, h.wk)?;
        let v = tape.matmul(z, h.wv)?;
        let dim = *tape.shape(q).last().expect("rank 3");
        let scores = tape.matmul_nt(q, k)?;
        let scaled = tape.scale(scores, T::one() / T::lit(dim as f64).sqrt());
        let probs = tape.softmax_lastdim(scaled, Some(&keep))?;
        outs.push(tape.matmul(probs, v)?);
    }
    let cat = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat(&outs, 2)?
    };
    tape.matmul(cat, wo)
}

/// Pre-norm encoder layer:
/// `Y = Z + mask ⊙ dropout(MHA(LN(Z)))`, `out = Y + mask ⊙ FF(LN(Y))`, where
/// FF is two per-frame linear maps with a ReLU between.
pub fn encoder_block<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    bound: &Bound<'_, T>,
    prefix: &str,
    cfg: &ModelConfig,
    mask: &FrameMask<T>,
    dropout: Option<&mut Rng>,
) -> Result<Var> {
    let name = |n: &str| format!("{prefix}.{n}");
    let eps = T::lit(cfg.layer_norm_eps);
    let ln1 = tape.layer_norm(z, bound.get(&name("ln1.g"))?, bound.get(&name("ln1.b"))?, eps)?;
    let heads = (0..cfg.heads)
        .map(|h| {
            Ok(HeadVars {
                wq: bound.get(&name(&format!("head{h}.wq")))?,
                wk: bound.get(&name(&format!("head{h}.wk")))?,
                wv: bound.get(&name(&format!("head{h}.wv")))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let att = multi_head_attention(tape, ln1, &heads, bound.get(&name("wo"))?, mask)?;
    let att = match dropout {
        Some(rng) => tape.dropout(att, cfg.dropout, rng, true)?,
        None => att,
    };
    let att = mask.apply(tape, att)?;
    let y = tape.add(z, att)?;

    let ln2 = tape.layer_norm(y, bound.get(&name("ln2.g"))?, bound.get(&name("ln2.b"))?, eps)?;
    let h = tape.affine(ln2, bound.get(&name("ff1.w"))?, bound.get(&name("ff1.b"))?)?;
    let h = tape.relu(h);
    let ff = tape.affine(h, bound.get(&name("ff2.w"))?, bound.get(&name("ff2.b"))?)?;
    let ff = mask.apply(tape, ff)?;
    tape.add(y, ff)
}

/// Pools valid frames (mean or last) and maps to one score per sequence.
pub fn readout<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: Var,
    w: Var,
    b: Var,
    mask: &FrameMask<T>,
    mode: Readout,
) -> Result<Var> {
    let weights = match mode {
        Readout::Mean => mask.mean_weights()?,
        Readout::LastToken => mask.last_weights()?,
    };
    let pooled = tape.time_weighted_sum(encoded, weights)?;
    let out = tape.affine(pooled, w, b)?;
    tape.reshape(out, &[mask.batch()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_values() {
        let d = 8;
        let pe = positional_encoding::<f64>(4, d).unwrap();
        for i in 0..d / 2 {
            assert_eq!(pe.get(&[0, 2 * i]), 0.0);
        }
        for x in 0..4 {
            assert!((pe.get(&[x, 1]) - (x as f64).cos()).abs() < 1e-15);
        }
        let expect = (10000f64.powf(-2.0 / d as f64)).sin();
        assert!((pe.get(&[1, 2]) - expect).abs() < 1e-15);
        assert!(positional_encoding::<f64>(3, 7).is_err());
    }
}
