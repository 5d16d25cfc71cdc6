use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::data::{build_tokenizer, prepare_examples, DEFAULT_MAX_VOCAB};
use super::{train_phase, Ablations, PhaseConfig, PhaseSummary, TrainState};
use crate::corpus::Corpus;
use crate::evaluation::{evaluate_model, MetricReport};
use crate::knowledge::{build_knowledge_vocab, KnowledgeBase, KnowledgeVocab};
use crate::model::{RationaleModel, SlmConfig};
use crate::{Error, Result};

/// Model shape apart from the sizes fixed by the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ffn: usize,
    pub max_note_tokens: usize,
    pub max_target_tokens: usize,
    pub tse_layers: usize,
    pub init_std: f64,
    pub ka_init_std: f64,
    pub ka_key_norm: bool,
    pub ka_identity_init: bool,
    pub max_vocab: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let t = SlmConfig::toy(0, 0);
        Self {
            d_model: t.d_model,
            n_heads: t.n_heads,
            n_enc_layers: t.n_enc_layers,
            n_dec_layers: t.n_dec_layers,
            d_ffn: t.d_ffn,
            max_note_tokens: t.max_note_tokens,
            max_target_tokens: t.max_target_tokens,
            tse_layers: t.tse_layers,
            init_std: t.init_std,
            ka_init_std: t.ka_init_std,
            ka_key_norm: t.ka_key_norm,
            ka_identity_init: t.ka_identity_init,
            max_vocab: DEFAULT_MAX_VOCAB,
        }
    }
}

impl ModelSettings {
    pub fn to_config(&self, vocab_size: usize, lab_features: usize) -> SlmConfig {
        SlmConfig {
            vocab_size,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            d_ffn: self.d_ffn,
            max_note_tokens: self.max_note_tokens,
            max_target_tokens: self.max_target_tokens,
            lab_features,
            tse_layers: self.tse_layers,
            init_std: self.init_std,
            ka_init_std: self.ka_init_std,
            ka_key_norm: self.ka_key_norm,
            ka_identity_init: self.ka_identity_init,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Model initialisation seed.
    pub seed: u64,
    pub threads: usize,
    pub model: ModelSettings,
    pub ablations: Ablations,
    pub phases: Vec<PhaseConfig>,
}

impl PipelineConfig {
    /// Desk-scale defaults with every phase seeded by `seed`.
    pub fn toy(seed: u64) -> Self {
        Self {
            seed,
            threads: 1,
            model: ModelSettings::default(),
            ablations: Ablations::none(),
            phases: (1..=3)
                .map(|p| PhaseConfig {
                    seed,
                    ..PhaseConfig::toy(p)
                })
                .collect(),
        }
    }

    /// Applies an ablation to every phase, dropping phases 2 and 3 when the
    /// lab and knowledge inputs are removed.
    pub fn with_ablations(mut self, ablations: Ablations) -> Self {
        self.ablations = ablations;
        for p in &mut self.phases {
            p.ablations = ablations;
        }
        if ablations.without_lab_and_know {
            self.phases.retain(|p| p.phase == 1);
        }
        self
    }

    /// Checks a run that starts from an untrained model: phases 1, 2, 3 or
    /// a prefix of them.
    pub fn validate(&self) -> Result<()> {
        self.validate_from(1)
    }

    /// Checks a run of consecutive phases beginning at `first`.
    pub fn validate_from(&self, first: u8) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.phases.is_empty() {
            return Err(Error::Config("no phases configured".into()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            p.validate()?;
            if p.phase as usize != first as usize + i {
                return Err(Error::Config(format!(
                    "phases must run in order from phase {first}; position {} holds phase {}",
                    i + 1,
                    p.phase
                )));
            }
            if p.ablations != self.ablations {
                return Err(Error::Config(format!(
                    "phase {} ablations differ from the run's",
                    p.phase
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

pub type EpochRecord = super::EpochStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    #[serde(flatten)]
    pub summary: PhaseSummary,
    /// File name inside the run directory.
    pub checkpoint: String,
    pub checkpoint_sha256: String,
    pub metrics: MetricReport,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub error: Option<String>,
    pub ablation: String,
    /// `labels_only` under the reasoning ablation, otherwise `rationales`.
    pub targets: String,
    pub config: PipelineConfig,
    /// Caller-supplied provenance of the inputs (hashes, teacher details).
    pub inputs: BTreeMap<String, serde_json::Value>,
    pub train_records: usize,
    pub test_records: usize,
    pub vocab_size: usize,
    pub knowledge_vocab_size: usize,
    pub parameters: usize,
    pub phases: Vec<PhaseRecord>,
    pub final_metrics: Option<MetricReport>,
    pub final_checkpoint: Option<String>,
    pub started_at: String,
    pub finished_at: Option<String>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }
}

/// The manifest with every `*_at` timestamp removed, for comparing runs.
pub fn comparable(manifest: &RunManifest) -> Result<serde_json::Value> {
    fn strip(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(m) => {
                m.retain(|k, _| !k.ends_with("_at"));
                m.values_mut().for_each(strip);
            }
            serde_json::Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(manifest)?;
    strip(&mut v);
    Ok(v)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub struct PipelineOutcome {
    pub manifest: RunManifest,
    pub state: TrainState,
    pub final_checkpoint: PathBuf,
    pub report: MetricReport,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// `manifest.json` for a run from phase 1, `manifest.phase{N}.json` for a
/// run resumed at phase N.
pub fn manifest_name(cfg: &PipelineConfig) -> String {
    match cfg.phases.first().map(|p| p.phase) {
        Some(n) if n > 1 => format!("manifest.phase{n}.json"),
        _ => MANIFEST_FILE.to_string(),
    }
}

/// Trains every configured phase in order, saving a checkpoint and
/// evaluating on `test` after each, and writes `manifest.json` into
/// `out_dir`. On failure the manifest is still written, holding the phases
/// that completed.
pub fn run_pipeline(
    train: &Corpus,
    test: &Corpus,
    kb: &KnowledgeBase,
    cfg: &PipelineConfig,
    out_dir: &Path,
    inputs: BTreeMap<String, serde_json::Value>,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    execute(train, test, kb, cfg, out_dir, inputs, None)
}

/// Continues from `state` with the phases in `cfg`, which must start right
/// after the last phase `state` completed. The tokenizer, model shape and
/// knowledge vocabulary come from `state`.
pub fn resume_pipeline(
    train: &Corpus,
    test: &Corpus,
    state: TrainState,
    cfg: &PipelineConfig,
    out_dir: &Path,
    inputs: BTreeMap<String, serde_json::Value>,
) -> Result<PipelineOutcome> {
    cfg.validate_from(state.phase + 1)?;
    if state.provenance.ablations != cfg.ablations {
        return Err(Error::Config(format!(
            "checkpoint was trained as {}, this run is {}",
            state.provenance.ablations.name(),
            cfg.ablations.name()
        )));
    }
    let kb = KnowledgeBase::default();
    execute(train, test, &kb, cfg, out_dir, inputs, Some(state))
}

fn execute(
    train: &Corpus,
    test: &Corpus,
    kb: &KnowledgeBase,
    cfg: &PipelineConfig,
    out_dir: &Path,
    inputs: BTreeMap<String, serde_json::Value>,
    start: Option<TrainState>,
) -> Result<PipelineOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut manifest = RunManifest {
        status: RunStatus::Failed,
        error: None,
        ablation: cfg.ablations.name().to_string(),
        targets: if cfg.ablations.without_reasoning { "labels_only" } else { "rationales" }.into(),
        config: cfg.clone(),
        inputs,
        train_records: train.len(),
        test_records: test.len(),
        vocab_size: 0,
        knowledge_vocab_size: 0,
        parameters: 0,
        phases: Vec::new(),
        final_metrics: None,
        final_checkpoint: None,
        started_at: now(),
        finished_at: None,
    };
    let manifest_path = out_dir.join(manifest_name(cfg));
    let result = pool.install(|| {
        let state = match start {
            Some(s) => s,
            None => initial_state(train, kb, cfg)?,
        };
        run_phases(state, train, test, cfg, out_dir, &mut manifest)
    });
    manifest.finished_at = Some(now());
    match result {
        Ok((state, path, report)) => {
            manifest.status = RunStatus::Completed;
            manifest.save(&manifest_path)?;
            Ok(PipelineOutcome {
                manifest,
                state,
                final_checkpoint: path,
                report,
            })
        }
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.save(&manifest_path)?;
            Err(e)
        }
    }
}

fn initial_state(train: &Corpus, kb: &KnowledgeBase, cfg: &PipelineConfig) -> Result<TrainState> {
    let first = train
        .records
        .first()
        .ok_or_else(|| Error::Size("training split is empty".into()))?;
    let n_features = first.labs.n_features();
    let tokenizer = build_tokenizer(train, Some(kb), &train.registry, cfg.model.max_vocab)?;
    let model_cfg = cfg.model.to_config(tokenizer.len(), n_features);
    let vk = if cfg.ablations.without_know {
        KnowledgeVocab::full(&tokenizer)
    } else {
        build_knowledge_vocab(kb, &tokenizer)
    };
    if vk.is_empty() && !cfg.ablations.without_lab_and_know {
        return Err(Error::Precondition(
            "knowledge vocabulary is empty; build the knowledge base first".into(),
        ));
    }
    let model = RationaleModel::new(model_cfg, tokenizer, cfg.seed)?;
    Ok(TrainState::new(model, vk.token_ids, cfg.seed, cfg.ablations))
}

fn run_phases(
    mut state: TrainState,
    train: &Corpus,
    test: &Corpus,
    cfg: &PipelineConfig,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(TrainState, PathBuf, MetricReport)> {
    manifest.vocab_size = state.model.tokenizer.len();
    manifest.knowledge_vocab_size = state.vk.len();
    manifest.parameters = state.model.store.num_elements(None);

    let mut last = None;
    for pc in &cfg.phases {
        let started_at = now();
        let examples = prepare_examples(train, &state.model, pc.target_kind())?;
        let summary = train_phase(&mut state, &examples, pc, None)?;
        let name = format!("phase{}.ckpt", pc.phase);
        let path = out_dir.join(&name);
        let sha = save_checkpoint(&state, &path)?;
        let metrics = evaluate_model(
            &state.model,
            test,
            &state.vk,
            pc.mode(),
            pc.target_kind(),
            cfg.seed,
        )?;
        log::info!(
            "phase {} done: micro-F1 {:.4}, macro-F1 {:.4}",
            pc.phase,
            metrics.prf.micro_f1,
            metrics.prf.macro_f1
        );
        manifest.phases.push(PhaseRecord {
            summary,
            checkpoint: name.clone(),
            checkpoint_sha256: sha,
            metrics: metrics.clone(),
            started_at,
            finished_at: now(),
        });
        manifest.final_metrics = Some(metrics.clone());
        manifest.final_checkpoint = Some(name);
        last = Some((path, metrics));
    }
    let (path, report) = last.expect("at least one phase ran");
    Ok((state, path, report))
}
