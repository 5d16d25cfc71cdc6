use numerics::{Real, Tape, Var};

use super::layers::{self, AttnIds};
use super::tokenizer::{BOS, EOS};
use super::{InputMode, ModelInput, RationaleModel};
use crate::Result;

struct LayerCache {
    self_k: Option<Var>,
    self_v: Option<Var>,
    cross_k: Var,
    cross_v: Var,
}

fn append(tape: &mut Tape, cache: Option<Var>, row: Var) -> Result<Var> {
    Ok(match cache {
        Some(c) => tape.concat_rows(&[c, row])?,
        None => row,
    })
}

fn project(tape: &mut Tape, x: Var, w: numerics::ParamId) -> Result<Var> {
    let w = tape.param(w);
    Ok(tape.matmul(x, w)?)
}

fn output(tape: &mut Tape, heads: Var, ids: AttnIds) -> Result<Var> {
    project(tape, heads, ids.wo)
}

/// Greedy decoding with cached keys and values; stops at `<eos>` or after
/// `max_len` tokens. Returns the generated ids without `<eos>`.
pub fn generate(
    model: &RationaleModel,
    input: &ModelInput,
    mode: InputMode,
    vk: &[usize],
    max_len: usize,
) -> Result<Vec<usize>> {
    let max_len = max_len.min(model.config.max_target_tokens + 1);
    if max_len == 0 {
        return Ok(Vec::new());
    }
    let ids = model.ids();
    let heads = model.config.n_heads;
    let mut tape = Tape::inference(&model.store);
    let enc = model.encoder_input(&mut tape, input, mode, vk)?;
    let memory = model.encode(&mut tape, enc.x)?;
    let mut caches = Vec::with_capacity(ids.dec.len());
    for blk in &ids.dec {
        caches.push(LayerCache {
            self_k: None,
            self_v: None,
            cross_k: project(&mut tape, memory, blk.cross.wk)?,
            cross_v: project(&mut tape, memory, blk.cross.wv)?,
        });
    }
    let emb = tape.param(ids.tok_emb);
    let pos = tape.param(ids.dec_pos);
    let mut out = Vec::new();
    let mut prev = BOS;
    for step in 0..max_len {
        let t = tape.gather(emb, &[prev])?;
        let p = tape.gather(pos, &[step])?;
        let mut x = tape.add(t, p)?;
        for (blk, cache) in ids.dec.iter().zip(caches.iter_mut()) {
            let h = layers::layer_norm(&mut tape, x, blk.ln1)?;
            let q = project(&mut tape, h, blk.self_attn.wq)?;
            let k = project(&mut tape, h, blk.self_attn.wk)?;
            let v = project(&mut tape, h, blk.self_attn.wv)?;
            let kc = append(&mut tape, cache.self_k, k)?;
            let vc = append(&mut tape, cache.self_v, v)?;
            cache.self_k = Some(kc);
            cache.self_v = Some(vc);
            let a = layers::multi_head(&mut tape, q, kc, vc, heads, None, false)?;
            let a = output(&mut tape, a, blk.self_attn)?;
            x = tape.add(x, a)?;

            let h = layers::layer_norm(&mut tape, x, blk.ln2)?;
            let q = project(&mut tape, h, blk.cross.wq)?;
            let c = layers::multi_head(&mut tape, q, cache.cross_k, cache.cross_v, heads, None, false)?;
            let c = output(&mut tape, c, blk.cross)?;
            x = tape.add(x, c)?;

            let h = layers::layer_norm(&mut tape, x, blk.ln3)?;
            let f = layers::feed_forward(&mut tape, h, blk.ffn)?;
            x = tape.add(x, f)?;
        }
        let x = layers::layer_norm(&mut tape, x, ids.dec_ln)?;
        let logits = tape.matmul_nt(x, emb, 1.0)?;
        let next = argmax(tape.value(logits));
        if next == EOS {
            break;
        }
        out.push(next);
        prev = next;
    }
    Ok(out)
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(xs: &[Real]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
