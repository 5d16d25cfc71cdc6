//! The three-phase training schedule.
//!
//! | phase | encoder input | target | trainable |
//! |---|---|---|---|
//! | 1 | note | labels, note rationale, lab rationale | SLM |
//! | 2 | lab sequence `H` | labels, lab rationale | fusion |
//! | 3 | `H`, `<sep>`, note | labels, note rationale, lab rationale | both |
//!
//! With the reasoning ablation every target is the labels clause alone.
//! Each phase starts from a fresh optimizer and hashes both parameter groups
//! before and after; a change to a frozen group is a hard error.

mod checkpoint;
mod data;
mod pipeline;

use numerics::{lr_at, AdamW, Gradients, ParamGroup, ParamStore, Real, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::model::target::TargetKind;
use crate::model::{InputMode, RationaleModel};
use crate::{Error, Result};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, sha256_hex, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use data::{build_tokenizer, prepare_examples, Example, DEFAULT_MAX_VOCAB};
pub use pipeline::{
    comparable, manifest_name, resume_pipeline, run_pipeline, EpochRecord, ModelSettings, PhaseRecord,
    PipelineConfig, PipelineOutcome, RunManifest, RunStatus, MANIFEST_FILE,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Knowledge attention over the whole vocabulary instead of `V^k`.
    pub without_know: bool,
    /// Targets carry labels only.
    pub without_reasoning: bool,
    /// Stop after phase 1.
    pub without_lab_and_know: bool,
}

impl Ablations {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn name(&self) -> &'static str {
        match (self.without_know, self.without_reasoning, self.without_lab_and_know) {
            (false, false, false) => "full",
            (true, false, false) => "without_know",
            (false, true, false) => "without_reasoning",
            (false, false, true) => "without_lab_and_know",
            _ => "combined",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase: u8,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default)]
    pub ablations: Ablations,
    /// Global gradient-norm clip.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Stop when the epoch loss has not improved for this many epochs.
    #[serde(default)]
    pub patience: Option<usize>,
    /// Hard cap on optimizer steps.
    #[serde(default)]
    pub max_steps: Option<u64>,
}

impl PhaseConfig {
    pub fn new(phase: u8) -> Self {
        Self {
            phase,
            epochs: 5,
            batch_size: 8,
            base_lr: 1e-5,
            weight_decay: 0.05,
            seed: 0,
            ablations: Ablations::none(),
            grad_clip: None,
            patience: None,
            max_steps: None,
        }
    }

    /// The desk-scale defaults: a larger step size than [`PhaseConfig::new`]
    /// since the model starts from random weights, and clipping at 1.
    pub fn toy(phase: u8) -> Self {
        Self {
            base_lr: 1e-3,
            grad_clip: Some(1.0),
            ..Self::new(phase)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=3).contains(&self.phase) {
            return bad(format!("phase must be 1, 2 or 3, got {}", self.phase));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay non-negative".into());
        }
        if self.ablations.without_lab_and_know && self.phase > 1 {
            return bad(format!(
                "phase {} is skipped under the lab-and-knowledge ablation",
                self.phase
            ));
        }
        if self.ablations.without_lab_and_know && self.ablations.without_know {
            return bad("without_lab_and_know already removes knowledge".into());
        }
        Ok(())
    }

    pub fn mode(&self) -> InputMode {
        phase_mode(self.phase)
    }

    pub fn target_kind(&self) -> TargetKind {
        phase_target(self.phase, self.ablations.without_reasoning)
    }
}

pub fn phase_mode(phase: u8) -> InputMode {
    match phase {
        1 => InputMode::Note,
        2 => InputMode::Lab,
        _ => InputMode::LabNote,
    }
}

pub fn phase_target(phase: u8, without_reasoning: bool) -> TargetKind {
    match (phase, without_reasoning) {
        (_, true) => TargetKind::LabelsOnly,
        (2, false) => TargetKind::LabRationale,
        _ => TargetKind::Full,
    }
}

/// Which groups a phase trains, as `(slm, fusion)`.
pub fn phase_trainable(phase: u8) -> (bool, bool) {
    match phase {
        1 => (true, false),
        2 => (false, true),
        _ => (true, true),
    }
}

/// Where a training state came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub creator: String,
    pub model_seed: u64,
    /// SHA-256 of the checkpoint this state was loaded from. Not saved, so
    /// that saving a loaded state reproduces the file.
    #[serde(skip)]
    pub loaded_from: Option<String>,
    pub phases_completed: Vec<u8>,
    pub ablations: Ablations,
}

/// Serializable position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since it does not fit a JSON number.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |m: &str| Error::Checkpoint(format!("rng state: {m}"));
        let bytes = hex::decode(&self.seed).map_err(|_| bad("seed is not hex"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad("seed is not 32 bytes"))?;
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("word position"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// A model plus everything needed to continue training it.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: RationaleModel,
    /// Token ids the knowledge attention reads (all words under the
    /// knowledge ablation).
    pub vk: Vec<usize>,
    pub optimizer: AdamW,
    /// Optimizer steps taken over all phases.
    pub step: u64,
    /// Last completed phase, 0 before training.
    pub phase: u8,
    /// Steps taken in `phase` (resets at each phase boundary).
    pub phase_step: u64,
    pub rng: ChaCha8Rng,
    pub provenance: Provenance,
}

impl TrainState {
    pub fn new(model: RationaleModel, vk: Vec<usize>, seed: u64, ablations: Ablations) -> Self {
        Self {
            model,
            vk,
            optimizer: AdamW::default(),
            step: 0,
            phase: 0,
            phase_step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            provenance: Provenance {
                creator: format!("rationale-core {}", env!("CARGO_PKG_VERSION")),
                model_seed: seed,
                ablations,
                ..Default::default()
            },
        }
    }

    fn set_phase_flags(&mut self, phase: u8) {
        let (slm, fusion) = phase_trainable(phase);
        self.model.store.set_group_trainable(ParamGroup::Slm, slm);
        self.model.store.set_group_trainable(ParamGroup::Fusion, fusion);
    }

    /// Checks that the trainable flags match `phase`.
    pub fn check_flags(&self, phase: u8) -> Result<()> {
        let (slm, fusion) = phase_trainable(phase);
        for (_, p) in self.model.store.iter() {
            let want = if p.group == ParamGroup::Slm { slm } else { fusion };
            if p.trainable != want {
                return Err(Error::Training(format!(
                    "parameter {} has trainable={} in phase {phase}",
                    p.name, p.trainable
                )));
            }
        }
        Ok(())
    }
}

/// Per-epoch summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: u64,
}

/// What one phase did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: u8,
    pub mode: InputMode,
    pub target_kind: TargetKind,
    pub epochs: Vec<EpochStats>,
    pub step_start: u64,
    pub step_end: u64,
    pub slm_hash_before: String,
    pub slm_hash_after: String,
    pub fusion_hash_before: String,
    pub fusion_hash_after: String,
}

/// Called after every optimizer step with the global step and the store.
pub type StepHook<'a> = dyn FnMut(u64, &mut ParamStore) + 'a;

fn batch_gradients(state: &TrainState, examples: &[&Example], mode: InputMode) -> Result<(Gradients, f64)> {
    let model = &state.model;
    let vk = &state.vk;
    let per_record: Vec<(Gradients, Real)> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new(&model.store);
            let loss = model.forward_loss(&mut tape, &ex.input, mode, vk, &ex.targets)?;
            let value = tape.scalar(loss)?;
            if !value.is_finite() {
                return Err(Error::Training(format!("non-finite loss on record {}", ex.record_id)));
            }
            Ok((tape.backward(loss)?, value))
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::new(model.store.len());
    let mut loss_sum = 0.0;
    for (g, l) in &per_record {
        total.add_assign(g);
        loss_sum += *l as f64;
    }
    total.scale(1.0 / examples.len() as Real);
    Ok((total, loss_sum))
}

fn check_frozen(
    phase: u8,
    group: ParamGroup,
    trainable: bool,
    before: &str,
    after: &str,
) -> Result<()> {
    if !trainable && before != after {
        return Err(Error::FrozenMutation {
            phase,
            group: group.as_str(),
            before: before.to_string(),
            after: after.to_string(),
        });
    }
    Ok(())
}

/// Runs one phase over prepared examples.
pub fn train_phase(
    state: &mut TrainState,
    examples: &[Example],
    cfg: &PhaseConfig,
    hook: Option<&mut StepHook<'_>>,
) -> Result<PhaseSummary> {
    cfg.validate()?;
    if state.phase + 1 != cfg.phase {
        return Err(Error::Ordering(format!(
            "phase {} needs a phase-{} state, got one after phase {}",
            cfg.phase,
            cfg.phase - 1,
            state.phase
        )));
    }
    if examples.is_empty() {
        return Err(Error::Size("no training examples".into()));
    }
    let mode = cfg.mode();
    let kind = cfg.target_kind();
    if let Some(bad) = examples.iter().find(|e| e.kind != kind) {
        return Err(Error::Precondition(format!(
            "example {} was prepared for {:?}, phase {} trains {:?}",
            bad.record_id, bad.kind, cfg.phase, kind
        )));
    }
    state.set_phase_flags(cfg.phase);
    state.optimizer.reset();
    state.phase_step = 0;
    state.rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    state.rng.set_stream(cfg.phase as u64);
    let (slm_on, fusion_on) = phase_trainable(cfg.phase);
    let slm_before = state.model.store.group_hash(ParamGroup::Slm);
    let fusion_before = state.model.store.group_hash(ParamGroup::Fusion);
    let step_start = state.step;

    let per_epoch = examples.len().div_ceil(cfg.batch_size) as u64;
    let planned = per_epoch * cfg.epochs as u64;
    let total_steps = cfg.max_steps.map_or(planned, |m| m.min(planned));
    let mut hook = hook;
    let mut epochs = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    'outer: for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut state.rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if state.phase_step >= total_steps {
                break;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (mut grads, batch_loss) = batch_gradients(state, &batch, mode)?;
            if let Some(c) = cfg.grad_clip {
                grads.clip_global_norm(c as Real);
            }
            let lr = lr_at(state.phase_step + 1, total_steps, cfg.base_lr as Real);
            state
                .optimizer
                .step(&mut state.model.store, &grads, lr, cfg.weight_decay as Real)?;
            state.step += 1;
            state.phase_step += 1;
            steps += 1;
            loss_sum += batch_loss;
            seen += batch.len();
            if let Some(h) = hook.as_mut() {
                h(state.step, &mut state.model.store);
            }
            state.check_flags(cfg.phase)?;
        }
        if seen == 0 {
            break;
        }
        let mean_loss = loss_sum / seen as f64;
        log::info!("phase {} epoch {} mean loss {mean_loss:.5}", cfg.phase, epoch + 1);
        epochs.push(EpochStats {
            epoch: epoch + 1,
            mean_loss,
            steps,
        });
        if state.phase_step >= total_steps {
            break;
        }
        if let Some(p) = cfg.patience {
            if mean_loss < best {
                best = mean_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= p {
                    break 'outer;
                }
            }
        }
    }

    let slm_after = state.model.store.group_hash(ParamGroup::Slm);
    let fusion_after = state.model.store.group_hash(ParamGroup::Fusion);
    check_frozen(cfg.phase, ParamGroup::Slm, slm_on, &slm_before, &slm_after)?;
    check_frozen(cfg.phase, ParamGroup::Fusion, fusion_on, &fusion_before, &fusion_after)?;
    state.phase = cfg.phase;
    state.provenance.phases_completed.push(cfg.phase);
    Ok(PhaseSummary {
        phase: cfg.phase,
        mode,
        target_kind: kind,
        epochs,
        step_start,
        step_end: state.step,
        slm_hash_before: slm_before,
        slm_hash_after: slm_after,
        fusion_hash_before: fusion_before,
        fusion_hash_after: fusion_after,
    })
}

fn run_phase(state: &mut TrainState, corpus: &Corpus, cfg: &PhaseConfig, phase: u8) -> Result<PhaseSummary> {
    if cfg.phase != phase {
        return Err(Error::Config(format!("config is for phase {}, not {phase}", cfg.phase)));
    }
    let examples = prepare_examples(corpus, &state.model, cfg.target_kind())?;
    train_phase(state, &examples, cfg, None)
}

/// Phase 1: note in, labels and both rationales out; SLM only.
pub fn train_phase1(state: &mut TrainState, corpus: &Corpus, cfg: &PhaseConfig) -> Result<PhaseSummary> {
    run_phase(state, corpus, cfg, 1)
}

/// Phase 2: lab sequence in, labels and lab rationale out; fusion only.
pub fn train_phase2(state: &mut TrainState, corpus: &Corpus, cfg: &PhaseConfig) -> Result<PhaseSummary> {
    run_phase(state, corpus, cfg, 2)
}

/// Phase 3: lab prefix plus note in, full target out; everything trains.
pub fn train_phase3(state: &mut TrainState, corpus: &Corpus, cfg: &PhaseConfig) -> Result<PhaseSummary> {
    run_phase(state, corpus, cfg, 3)
}

/// Mean per-record loss without updating anything.
pub fn mean_loss(state: &TrainState, examples: &[Example], mode: InputMode) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Size("no examples".into()));
    }
    let model = &state.model;
    let losses: Vec<Real> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::inference(&model.store);
            let l = model.forward_loss(&mut tape, &ex.input, mode, &state.vk, &ex.targets)?;
            Ok(tape.scalar(l)?)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().map(|&l| l as f64).sum::<f64>() / losses.len() as f64)
}
