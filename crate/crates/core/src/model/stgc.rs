//! Spatio-temporal graph Conv-GRU blocks and their dense wiring.
//!
//! All functions take `[B, T, N, F]` values on a tape: batch, frames,
//! joints, channels.

use std::sync::Arc;

use super::config::{GruUpdate, ModelConfig};
use super::mask::FrameMask;
use super::params::Bound;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;

/// `[V ‖ relu(K_a * V)]` along channels, with padded frames zeroed.
pub fn input_augment<T: Scalar>(
    tape: &mut Tape<T>,
    v: Var,
    kernel: Var,
    bias: Var,
    mask: &FrameMask<T>,
) -> Result<Var> {
    let conv = tape.temporal_conv(v, kernel, Some(bias))?;
    let act = tape.relu(conv);
    let p = tape.concat(&[v, act], 3)?;
    mask.apply(tape, p)
}

/// `sum_k A_k · P · W_k`: joints mixed by each hop operator, channels mapped
/// by that hop's weight.
pub fn graph_convolution<T: Scalar>(
    tape: &mut Tape<T>,
    p: Var,
    hops: &[Arc<SparseMatrix<T>>],
    weights: &[Var],
) -> Result<Var> {
    if hops.len() != weights.len() || hops.is_empty() {
        return Err(Error::Config(format!(
            "{} hop matrices but {} graph weights",
            hops.len(),
            weights.len()
        )));
    }
    let mut terms = Vec::with_capacity(hops.len());
    for (a, &w) in hops.iter().zip(weights) {
        let pw = tape.matmul(p, w)?;
        terms.push(tape.graph_mix(pw, a.clone())?);
    }
    tape.add_all(&terms)
}

/// Gate weights of the recurrent unit; each `w_*` is `[F, F]` (a 1x1
/// convolution shared by all joints) and each `b_*` is `[F]`.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_zx: Var,
    pub w_zh: Var,
    pub b_z: Var,
    pub w_rx: Var,
    pub w_rh: Var,
    pub b_r: Var,
    pub w_ox: Var,
    pub w_oh: Var,
    pub b_o: Var,
}

impl GruVars {
    pub fn from_bound<T: Scalar>(bound: &Bound<'_, T>, prefix: &str) -> Result<Self> {
        let g = |n: &str| bound.get(&format!("{prefix}.{n}"));
        Ok(GruVars {
            w_zx: g("w_zx")?,
            w_zh: g("w_zh")?,
            b_z: g("b_z")?,
            w_rx: g("w_rx")?,
            w_rh: g("w_rh")?,
            b_r: g("b_r")?,
            w_ox: g("w_ox")?,
            w_oh: g("w_oh")?,
            b_o: g("b_o")?,
        })
    }
}

/// Runs the gated recurrence over axis 1 of `x: [B, T, N, F]` from a zero
/// initial state and returns every state, `[B, T, N, F]`.
///
/// ```text
/// z = σ(x·w_zx + h·w_zh + b_z)
/// r = σ(x·w_rx + h·w_rh + b_r)
/// o = tanh(x·w_ox + (r ⊙ h)·w_oh + b_o)
/// h' = z ⊙ x + (1 - z) ⊙ o        (InputCarry)
/// h' = z ⊙ h + (1 - z) ⊙ o        (Standard)
/// ```
pub fn conv_gru_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &GruVars, mode: GruUpdate) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "recurrence input must be rank 4, got {shape:?}"
        )));
    }
    let frames = shape[1];
    // Input-side projections for all frames at once.
    let xz = tape.affine(x, p.w_zx, p.b_z)?;
    let xr = tape.affine(x, p.w_rx, p.b_r)?;
    let xo = tape.affine(x, p.w_ox, p.b_o)?;
    let mut states = Vec::with_capacity(frames);
    let mut h: Option<Var> = None;
    for t in 0..frames {
        let x_t = tape.select(x, 1, t)?;
        let xz_t = tape.select(xz, 1, t)?;
        let xo_t = tape.select(xo, 1, t)?;
        let (z_pre, o_pre) = match h {
            None => (xz_t, xo_t),
            Some(h_prev) => {
                let hz = tape.matmul(h_prev, p.w_zh)?;
                let z_pre = tape.add(xz_t, hz)?;
                let xr_t = tape.select(xr, 1, t)?;
                let hr = tape.matmul(h_prev, p.w_rh)?;
                let r_pre = tape.add(xr_t, hr)?;
                let r = tape.sigmoid(r_pre);
                let rh = tape.mul(r, h_prev)?;
                let ho = tape.matmul(rh, p.w_oh)?;
                (z_pre, tape.add(xo_t, ho)?)
            }
        };
        let z = tape.sigmoid(z_pre);
        let o = tape.tanh(o_pre);
        let keep = tape.one_minus(z);
        let fresh = tape.mul(keep, o)?;
        let carried = match (mode, h) {
            (GruUpdate::InputCarry, _) => Some(tape.mul(z, x_t)?),
            (GruUpdate::Standard, Some(h_prev)) => Some(tape.mul(z, h_prev)?),
            (GruUpdate::Standard, None) => None,
        };
        let next = match carried {
            Some(c) => tape.add(c, fresh)?,
            None => fresh,
        };
        states.push(next);
        h = Some(next);
    }
    tape.stack(&states, 1)
}

/// Per-frame joint attention restricted to the first-hop neighborhood:
/// scores `h_i · h_j / sqrt(F)` on the support of `support`, normalized per
/// row, then used to average neighbor states. The row-stochastic map is
/// available from [`Tape::attention_weights`] on the returned value.
pub fn attention_injection<T: Scalar>(tape: &mut Tape<T>, h: Var, support: &Arc<SparseMatrix<T>>) -> Result<Var> {
    let f = *tape.shape(h).last().unwrap_or(&1);
    let scale = T::one() / T::lit(f as f64).sqrt();
    tape.neighbor_attention(h, support.clone(), scale)
}

/// Parallel same-length temporal convolutions, concatenated on channels.
/// Even kernels put the extra frame of padding on the right.
pub fn temporal_conv_bank<T: Scalar>(tape: &mut Tape<T>, z: Var, kernels: &[(Var, Var)]) -> Result<Var> {
    let mut outs = Vec::with_capacity(kernels.len());
    for &(w, b) in kernels {
        let taps = tape.shape(w)[0];
        outs.push(tape.temporal_conv_padded(z, w, Some(b), (taps.max(1) - 1) / 2)?);
    }
    tape.concat(&outs, 3)
}

/// Values produced by one block.
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    /// Input after augmentation, `[B, T, N, C_in + augment]`.
    pub augmented: Var,
    /// Bank output, `[B, T, N, bank_width]`.
    pub features: Var,
    /// Node carrying the joint attention map.
    pub attention: Var,
}

/// Graph operators shared by all blocks.
#[derive(Clone, Debug)]
pub struct GraphOperators<T> {
    /// Normalized adjacency per configured hop order.
    pub hops: Vec<Arc<SparseMatrix<T>>>,
    /// First-hop neighborhood (with self-loops) for attention injection.
    pub support: Arc<SparseMatrix<T>>,
}

pub fn block_forward<T: Scalar>(
    tape: &mut Tape<T>,
    input: Var,
    bound: &Bound<'_, T>,
    prefix: &str,
    cfg: &ModelConfig,
    ops: &GraphOperators<T>,
    mask: &FrameMask<T>,
) -> Result<BlockOutput> {
    let name = |n: &str| format!("{prefix}.{n}");
    let p = input_augment(
        tape,
        input,
        bound.get(&name("augment.w"))?,
        bound.get(&name("augment.b"))?,
        mask,
    )?;
    let weights = (0..cfg.hops.len())
        .map(|k| bound.get(&name(&format!("gcn.w{k}"))))
        .collect::<Result<Vec<_>>>()?;
    let g = graph_convolution(tape, p, &ops.hops, &weights)?;
    let gru = GruVars::from_bound(bound, &name("gru"))?;
    let h = conv_gru_forward(tape, g, &gru, cfg.gru_update)?;
    let h = mask.apply(tape, h)?;
    let attention = attention_injection(tape, h, &ops.support)?;
    let kernels = (0..cfg.bank_kernels.len())
        .map(|j| {
            Ok((
                bound.get(&name(&format!("bank{j}.w")))?,
                bound.get(&name(&format!("bank{j}.b")))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let bank = temporal_conv_bank(tape, attention, &kernels)?;
    let features = mask.apply(tape, bank)?;
    Ok(BlockOutput {
        augmented: p,
        features,
        attention,
    })
}

/// Dense stack: block 0 reads the raw input; block `i > 0` reads the
/// channel concatenation of block 0's augmented input and the features of
/// every earlier block.
pub fn dense_forward<T: Scalar>(
    tape: &mut Tape<T>,
    v: Var,
    bound: &Bound<'_, T>,
    cfg: &ModelConfig,
    ops: &GraphOperators<T>,
    mask: &FrameMask<T>,
) -> Result<Vec<BlockOutput>> {
    let v = mask.apply(tape, v)?;
    let mut outputs: Vec<BlockOutput> = Vec::with_capacity(cfg.blocks);
    for i in 0..cfg.blocks {
        let input = if i == 0 {
            v
        } else {
            let mut parts = vec![outputs[0].augmented];
            parts.extend(outputs.iter().map(|o| o.features));
            tape.concat(&parts, 3)?
        };
        outputs.push(block_forward(tape, input, bound, &format!("block{i}"), cfg, ops, mask)?);
    }
    Ok(outputs)
}
