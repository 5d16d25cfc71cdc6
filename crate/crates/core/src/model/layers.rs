//! Transformer building blocks recorded on a [`Tape`].

use numerics::{ParamGroup, ParamId, ParamStore, Real, Tape, Var};

use crate::Result;

pub const LN_EPS: Real = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct LnIds {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Pre-LN encoder block: self-attention then feed-forward.
#[derive(Clone, Copy, Debug)]
pub struct EncoderBlock {
    pub ln1: LnIds,
    pub attn: AttnIds,
    pub ln2: LnIds,
    pub ffn: FfnIds,
}

/// Pre-LN decoder block: causal self-attention, cross-attention, feed-forward.
#[derive(Clone, Copy, Debug)]
pub struct DecoderBlock {
    pub ln1: LnIds,
    pub self_attn: AttnIds,
    pub ln2: LnIds,
    pub cross: AttnIds,
    pub ln3: LnIds,
    pub ffn: FfnIds,
}

/// Registers parameters with deterministic initial values.
pub struct Builder<'a, F: FnMut(usize) -> Vec<Real>> {
    pub store: &'a mut ParamStore,
    pub group: ParamGroup,
    pub init: F,
}

impl<F: FnMut(usize) -> Vec<Real>> Builder<'_, F> {
    pub fn weight(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let n = shape.iter().product();
        let t = numerics::Tensor::new(shape.to_vec(), (self.init)(n))?;
        Ok(self.store.add(name, t, self.group)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: Real) -> Result<ParamId> {
        let n = shape.iter().product();
        let t = numerics::Tensor::new(shape.to_vec(), vec![value; n])?;
        Ok(self.store.add(name, t, self.group)?)
    }

    pub fn ln(&mut self, prefix: &str, d: usize) -> Result<LnIds> {
        Ok(LnIds {
            g: self.constant(&format!("{prefix}.g"), &[d], 1.0)?,
            b: self.constant(&format!("{prefix}.b"), &[d], 0.0)?,
        })
    }

    pub fn attn(&mut self, prefix: &str, d: usize) -> Result<AttnIds> {
        Ok(AttnIds {
            wq: self.weight(&format!("{prefix}.wq"), &[d, d])?,
            wk: self.weight(&format!("{prefix}.wk"), &[d, d])?,
            wv: self.weight(&format!("{prefix}.wv"), &[d, d])?,
            wo: self.weight(&format!("{prefix}.wo"), &[d, d])?,
        })
    }

    pub fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> Result<FfnIds> {
        Ok(FfnIds {
            w1: self.weight(&format!("{prefix}.w1"), &[d, f])?,
            b1: self.constant(&format!("{prefix}.b1"), &[f], 0.0)?,
            w2: self.weight(&format!("{prefix}.w2"), &[f, d])?,
            b2: self.constant(&format!("{prefix}.b2"), &[d], 0.0)?,
        })
    }

    pub fn encoder_block(&mut self, prefix: &str, d: usize, f: usize) -> Result<EncoderBlock> {
        Ok(EncoderBlock {
            ln1: self.ln(&format!("{prefix}.ln1"), d)?,
            attn: self.attn(&format!("{prefix}.attn"), d)?,
            ln2: self.ln(&format!("{prefix}.ln2"), d)?,
            ffn: self.ffn(&format!("{prefix}.ffn"), d, f)?,
        })
    }

    pub fn decoder_block(&mut self, prefix: &str, d: usize, f: usize) -> Result<DecoderBlock> {
        Ok(DecoderBlock {
            ln1: self.ln(&format!("{prefix}.ln1"), d)?,
            self_attn: self.attn(&format!("{prefix}.self"), d)?,
            ln2: self.ln(&format!("{prefix}.ln2"), d)?,
            cross: self.attn(&format!("{prefix}.cross"), d)?,
            ln3: self.ln(&format!("{prefix}.ln3"), d)?,
            ffn: self.ffn(&format!("{prefix}.ffn"), d, f)?,
        })
    }
}

pub fn layer_norm(tape: &mut Tape, x: Var, ln: LnIds) -> Result<Var> {
    let g = tape.param(ln.g);
    let b = tape.param(ln.b);
    Ok(tape.layer_norm(x, g, b, LN_EPS)?)
}

pub fn feed_forward(tape: &mut Tape, x: Var, ffn: FfnIds) -> Result<Var> {
    let (w1, b1, w2, b2) = (
        tape.param(ffn.w1),
        tape.param(ffn.b1),
        tape.param(ffn.w2),
        tape.param(ffn.b2),
    );
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.gelu(h);
    let o = tape.matmul(h, w2)?;
    Ok(tape.add_bias(o, b2)?)
}

/// Multi-head scaled dot-product attention over already projected
/// `q [n, d]`, `k [m, d]`, `v [m, d]`, before the output projection.
pub fn multi_head(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
    key_mask: Option<&[bool]>,
    causal: bool,
) -> Result<Var> {
    let d = tape.dims(q).1;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh)?,
                tape.slice_cols(k, h * dh, dh)?,
                tape.slice_cols(v, h * dh, dh)?,
            )
        };
        let s = tape.matmul_nt(qh, kh, scale)?;
        let a = tape.softmax(s, key_mask, causal.then_some(0))?;
        heads.push(tape.matmul(a, vh)?);
    }
    if n_heads == 1 {
        Ok(heads[0])
    } else {
        Ok(tape.concat_cols(&heads)?)
    }
}

/// Projects `x` (queries) and `src` (keys/values), attends, and applies the
/// output projection.
pub fn attention(
    tape: &mut Tape,
    x: Var,
    src: Var,
    ids: AttnIds,
    n_heads: usize,
    key_mask: Option<&[bool]>,
    causal: bool,
) -> Result<Var> {
    let (wq, wk, wv, wo) = (
        tape.param(ids.wq),
        tape.param(ids.wk),
        tape.param(ids.wv),
        tape.param(ids.wo),
    );
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(src, wk)?;
    let v = tape.matmul(src, wv)?;
    let o = multi_head(tape, q, k, v, n_heads, key_mask, causal)?;
    Ok(tape.matmul(o, wo)?)
}

pub fn encoder_block(
    tape: &mut Tape,
    x: Var,
    blk: &EncoderBlock,
    n_heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<Var> {
    let h = layer_norm(tape, x, blk.ln1)?;
    let a = attention(tape, h, h, blk.attn, n_heads, key_mask, false)?;
    let x = tape.add(x, a)?;
    let h = layer_norm(tape, x, blk.ln2)?;
    let f = feed_forward(tape, h, blk.ffn)?;
    Ok(tape.add(x, f)?)
}

/// A decoder block over a full (teacher-forced) target prefix.
pub fn decoder_block(
    tape: &mut Tape,
    x: Var,
    memory: Var,
    blk: &DecoderBlock,
    n_heads: usize,
    memory_mask: Option<&[bool]>,
) -> Result<Var> {
    let h = layer_norm(tape, x, blk.ln1)?;
    let a = attention(tape, h, h, blk.self_attn, n_heads, None, true)?;
    let x = tape.add(x, a)?;
    let h = layer_norm(tape, x, blk.ln2)?;
    let c = attention(tape, h, memory, blk.cross, n_heads, memory_mask, false)?;
    let x = tape.add(x, c)?;
    let h = layer_norm(tape, x, blk.ln3)?;
    let f = feed_forward(tape, h, blk.ffn)?;
    Ok(tape.add(x, f)?)
}
