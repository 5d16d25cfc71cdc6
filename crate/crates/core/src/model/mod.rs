//! The student model: a small encoder-decoder language model (the SLM
//! parameters) plus a patch-based lab encoder and knowledge attention (the
//! fusion parameters).
//!
//! Encoder inputs depend on the mode:
//! - `Note`: note token embeddings with learned positions.
//! - `Lab`: the knowledge-attended lab sequence `H`.
//! - `LabNote`: `H`, then the `<sep>` embedding, then the note embeddings.
//!
//! Padding patches of `H` are masked out of every attention that reads
//! them, which is the same as leaving their rows out; the implementation
//! does the latter.

mod generate;
mod input;
pub mod layers;
pub mod target;
pub mod tokenizer;

use numerics::{ParamGroup, ParamId, ParamStore, Real, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{NUM_PATCHES, PATCH_LEN};
use crate::{Error, Result};
use layers::{Builder, DecoderBlock, EncoderBlock, LnIds};
use tokenizer::{Tokenizer, BOS, PAD, SEP};

pub use generate::generate;
pub use input::{robust_scaled_patches, LabInput, ModelInput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ffn: usize,
    pub max_note_tokens: usize,
    pub max_target_tokens: usize,
    pub lab_features: usize,
    pub tse_layers: usize,
    pub init_std: f64,
    /// Init scale of the knowledge attention projections.
    pub ka_init_std: f64,
    /// Layer-normalise (no affine) the knowledge embedding rows before the
    /// key and value projections.
    #[serde(default)]
    pub ka_key_norm: bool,
    /// Start the knowledge attention projections at identity plus noise.
    #[serde(default)]
    pub ka_identity_init: bool,
}

impl SlmConfig {
    /// The default desk-scale configuration for a given vocabulary.
    pub fn toy(vocab_size: usize, lab_features: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ffn: 128,
            max_note_tokens: 64,
            max_target_tokens: 96,
            lab_features,
            tse_layers: 1,
            init_std: 0.02,
            ka_init_std: 0.02,
            ka_key_norm: true,
            ka_identity_init: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size <= tokenizer::SPECIALS.len() {
            return bad(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if self.lab_features == 0 || self.d_ffn == 0 {
            return bad("lab_features and d_ffn must be positive".into());
        }
        Ok(())
    }
}

/// Which encoder input to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Note,
    Lab,
    LabNote,
}

#[derive(Clone, Debug)]
pub(crate) struct ModelIds {
    tok_emb: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    enc: Vec<EncoderBlock>,
    enc_ln: LnIds,
    dec: Vec<DecoderBlock>,
    dec_ln: LnIds,
    tse_w: ParamId,
    tse_b: ParamId,
    tse_pos: ParamId,
    tse: Vec<EncoderBlock>,
    tse_ln: LnIds,
    ka_wq: ParamId,
    ka_wk: ParamId,
    ka_wv: ParamId,
}

/// Truncated normal (resampled beyond two standard deviations).
fn trunc_normal(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Vec<Real> {
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    (0..n)
        .map(|_| loop {
            let x: f64 = dist.sample(rng);
            if x.abs() <= 2.0 * std {
                break x as Real;
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct RationaleModel {
    pub config: SlmConfig,
    pub tokenizer: Tokenizer,
    pub store: ParamStore,
    ids: ModelIds,
}

/// The encoder sequence for one record.
#[derive(Clone, Copy, Debug)]
pub struct EncoderInput {
    pub x: Var,
    /// Length including masked padding patches.
    pub logical_len: usize,
    pub h: Option<Var>,
    pub ka_weights: Option<Var>,
}

impl RationaleModel {
    pub fn new(config: SlmConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != tokenizer.len() {
            return Err(Error::Config(format!(
                "vocab_size {} does not match tokenizer size {}",
                config.vocab_size,
                tokenizer.len()
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        let (d, f) = (config.d_model, config.d_ffn);
        let mut b = Builder {
            store: &mut store,
            group: ParamGroup::Slm,
            init: |n| trunc_normal(&mut rng, std, n),
        };
        let tok_emb = b.weight("slm.tok_emb", &[config.vocab_size, d])?;
        let enc_pos = b.weight("slm.enc_pos", &[config.max_note_tokens.max(1), d])?;
        let dec_pos = b.weight("slm.dec_pos", &[config.max_target_tokens + 1, d])?;
        let enc = (0..config.n_enc_layers)
            .map(|l| b.encoder_block(&format!("slm.enc.{l}"), d, f))
            .collect::<Result<Vec<_>>>()?;
        let enc_ln = b.ln("slm.enc.ln_f", d)?;
        let dec = (0..config.n_dec_layers)
            .map(|l| b.decoder_block(&format!("slm.dec.{l}"), d, f))
            .collect::<Result<Vec<_>>>()?;
        let dec_ln = b.ln("slm.dec.ln_f", d)?;
        b.group = ParamGroup::Fusion;
        let tse_w = b.weight("tse.proj.w", &[PATCH_LEN * config.lab_features, d])?;
        let tse_b = b.constant("tse.proj.b", &[d], 0.0)?;
        let tse_pos = b.weight("tse.pos", &[NUM_PATCHES, d])?;
        let tse = (0..config.tse_layers)
            .map(|l| b.encoder_block(&format!("tse.layer.{l}"), d, f))
            .collect::<Result<Vec<_>>>()?;
        let tse_ln = b.ln("tse.ln_f", d)?;
        drop(b);
        let ka_std = config.ka_init_std;
        let mut b = Builder {
            store: &mut store,
            group: ParamGroup::Fusion,
            init: |n| trunc_normal(&mut rng, ka_std, n),
        };
        let ka_wq = b.weight("ka.wq", &[d, d])?;
        let ka_wk = b.weight("ka.wk", &[d, d])?;
        let ka_wv = b.weight("ka.wv", &[d, d])?;
        drop(b);
        if config.ka_identity_init {
            for id in [ka_wq, ka_wk, ka_wv] {
                let t = store.tensor_mut(id);
                for i in 0..d {
                    t.data_mut()[i * d + i] += 1.0;
                }
            }
        }
        let ids = ModelIds {
            tok_emb,
            enc_pos,
            dec_pos,
            enc,
            enc_ln,
            dec,
            dec_ln,
            tse_w,
            tse_b,
            tse_pos,
            tse,
            tse_ln,
            ka_wq,
            ka_wk,
            ka_wv,
        };
        let model = Self {
            config,
            tokenizer,
            store,
            ids,
        };
        model.check_partition()?;
        Ok(model)
    }

    /// Every parameter is in exactly one group, and the groups split along
    /// the `slm.` / fusion naming.
    fn check_partition(&self) -> Result<()> {
        for (_, p) in self.store.iter() {
            let slm_name = p.name.starts_with("slm.");
            if slm_name != (p.group == ParamGroup::Slm) {
                return Err(Error::Config(format!(
                    "parameter {} is in the wrong group",
                    p.name
                )));
            }
        }
        Ok(())
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn tok_emb_id(&self) -> ParamId {
        self.ids.tok_emb
    }

    /// Projects each patch row (before positions are added).
    pub fn tse_project(&self, tape: &mut Tape, lab: &LabInput) -> Result<Var> {
        let width = PATCH_LEN * self.config.lab_features;
        if lab.values.len() != NUM_PATCHES * width || lab.patch_mask.len() != NUM_PATCHES {
            return Err(Error::Numerics(numerics::NumericsError::ShapeMismatch {
                op: "tse_encode",
                left: vec![NUM_PATCHES, width],
                right: vec![lab.values.len() / width.max(1), lab.patch_mask.len()],
            }));
        }
        let x = tape.leaf(numerics::Tensor::new(vec![NUM_PATCHES, width], lab.values.clone())?);
        let w = tape.param(self.ids.tse_w);
        let b = tape.param(self.ids.tse_b);
        let p = tape.matmul(x, w)?;
        Ok(tape.add_bias(p, b)?)
    }

    /// `T^e`: `[125, d]`, padding patches masked in attention.
    pub fn tse_encode(&self, tape: &mut Tape, lab: &LabInput) -> Result<Var> {
        let p = self.tse_project(tape, lab)?;
        let pos = tape.param(self.ids.tse_pos);
        let mut x = tape.add(p, pos)?;
        for blk in &self.ids.tse {
            x = layers::encoder_block(tape, x, blk, self.config.n_heads, Some(&lab.patch_mask))?;
        }
        layers::layer_norm(tape, x, self.ids.tse_ln)
    }

    /// Knowledge attention `softmax((T^e W^q)(E_k W^k)^T / sqrt(d)) (E_k W^v)`
    /// with `E_k` the token-embedding rows of `vk`, optionally
    /// layer-normalised. Returns `(H, weights)`.
    pub fn ka_attend(&self, tape: &mut Tape, te: Var, vk: &[usize]) -> Result<(Var, Var)> {
        if vk.is_empty() {
            return Err(Error::Precondition("knowledge vocabulary is empty".into()));
        }
        let emb = tape.param(self.ids.tok_emb);
        let ek = tape.gather(emb, vk)?;
        let ek = if self.config.ka_key_norm {
            let d = self.config.d_model;
            let g = tape.leaf(numerics::Tensor::new(vec![d], vec![1.0; d])?);
            let b = tape.leaf(numerics::Tensor::new(vec![d], vec![0.0; d])?);
            tape.layer_norm(ek, g, b, layers::LN_EPS)?
        } else {
            ek
        };
        let (wq, wk, wv) = (
            tape.param(self.ids.ka_wq),
            tape.param(self.ids.ka_wk),
            tape.param(self.ids.ka_wv),
        );
        let q = tape.matmul(te, wq)?;
        let k = tape.matmul(ek, wk)?;
        let v = tape.matmul(ek, wv)?;
        let scale = 1.0 / (self.config.d_model as Real).sqrt();
        let s = tape.matmul_nt(q, k, scale)?;
        let a = tape.softmax(s, None, None)?;
        let h = tape.matmul(a, v)?;
        Ok((h, a))
    }

    fn note_embedding(&self, tape: &mut Tape, note_ids: &[usize]) -> Result<Var> {
        let ids = &note_ids[..note_ids.len().min(self.config.max_note_tokens)];
        let emb = tape.param(self.ids.tok_emb);
        let pos = tape.param(self.ids.enc_pos);
        let t = tape.gather(emb, ids)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let p = tape.gather(pos, &positions)?;
        Ok(tape.add(t, p)?)
    }

    /// Builds the encoder sequence for `mode`.
    pub fn encoder_input(
        &self,
        tape: &mut Tape,
        input: &ModelInput,
        mode: InputMode,
        vk: &[usize],
    ) -> Result<EncoderInput> {
        let n_note = input.note_ids.len().min(self.config.max_note_tokens);
        if mode == InputMode::Note {
            let x = self.note_embedding(tape, &input.note_ids)?;
            return Ok(EncoderInput {
                x,
                logical_len: n_note,
                h: None,
                ka_weights: None,
            });
        }
        let te = self.tse_encode(tape, &input.lab)?;
        let (h, a) = self.ka_attend(tape, te, vk)?;
        let valid: Vec<usize> = (0..NUM_PATCHES).filter(|&p| input.lab.patch_mask[p]).collect();
        let h_valid = tape.gather(h, &valid)?;
        let (x, logical_len) = match mode {
            InputMode::Lab => (h_valid, NUM_PATCHES),
            _ => {
                let emb = tape.param(self.ids.tok_emb);
                let sep = tape.gather(emb, &[SEP])?;
                let note = self.note_embedding(tape, &input.note_ids)?;
                (
                    tape.concat_rows(&[h_valid, sep, note])?,
                    NUM_PATCHES + 1 + n_note,
                )
            }
        };
        Ok(EncoderInput {
            x,
            logical_len,
            h: Some(h),
            ka_weights: Some(a),
        })
    }

    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut x = x;
        for blk in &self.ids.enc {
            x = layers::encoder_block(tape, x, blk, self.config.n_heads, None)?;
        }
        layers::layer_norm(tape, x, self.ids.enc_ln)
    }

    /// Target ids as trained: truncated to `max_target_tokens`, then `<eos>`.
    pub fn target_ids(&self, text: &str) -> Vec<usize> {
        let mut ids = self.tokenizer.encode(text);
        ids.truncate(self.config.max_target_tokens);
        ids.push(tokenizer::EOS);
        ids
    }

    /// Teacher-forced logits `[targets.len(), vocab]`.
    pub fn decode_logits(&self, tape: &mut Tape, memory: Var, targets: &[usize]) -> Result<Var> {
        let mut dec_in = Vec::with_capacity(targets.len());
        dec_in.push(BOS);
        dec_in.extend_from_slice(&targets[..targets.len().saturating_sub(1)]);
        if dec_in.len() > self.config.max_target_tokens + 1 {
            return Err(Error::Precondition(format!(
                "target of {} tokens exceeds the decoder length {}",
                targets.len(),
                self.config.max_target_tokens + 1
            )));
        }
        let emb = tape.param(self.ids.tok_emb);
        let pos = tape.param(self.ids.dec_pos);
        let t = tape.gather(emb, &dec_in)?;
        let positions: Vec<usize> = (0..dec_in.len()).collect();
        let p = tape.gather(pos, &positions)?;
        let mut x = tape.add(t, p)?;
        for blk in &self.ids.dec {
            x = layers::decoder_block(tape, x, memory, blk, self.config.n_heads, None)?;
        }
        let x = layers::layer_norm(tape, x, self.ids.dec_ln)?;
        Ok(tape.matmul_nt(x, emb, 1.0)?)
    }

    /// Mean token cross-entropy of `targets` given the mode's encoder input.
    pub fn forward_loss(
        &self,
        tape: &mut Tape,
        input: &ModelInput,
        mode: InputMode,
        vk: &[usize],
        targets: &[usize],
    ) -> Result<Var> {
        let enc = self.encoder_input(tape, input, mode, vk)?;
        let memory = self.encode(tape, enc.x)?;
        let logits = self.decode_logits(tape, memory, targets)?;
        Ok(tape.cross_entropy(logits, targets, PAD)?)
    }

    pub(crate) fn ids(&self) -> &ModelIds {
        &self.ids
    }

    /// Replaces parameter values by name; names and shapes must match.
    pub fn load_values(&mut self, values: &[(String, Vec<usize>, Vec<Real>)]) -> Result<()> {
        if values.len() != self.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                values.len(),
                self.store.len()
            )));
        }
        for (name, shape, data) in values {
            let id = self
                .store
                .id(name)
                .map_err(|_| Error::Checkpoint(format!("unknown tensor {name:?}")))?;
            let t = self.store.tensor_mut(id);
            if t.shape() != shape.as_slice() || t.len() != data.len() {
                return Err(Error::Checkpoint(format!("shape mismatch for {name:?}")));
            }
            t.data_mut().copy_from_slice(data);
        }
        Ok(())
    }
}
