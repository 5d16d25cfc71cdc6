use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rationale::caption::{caption_labs, CaptionSet};
use rationale::corpus::synth::generate_synthetic_corpus;
use rationale::corpus::{load_corpus_with, render_corpus, save_corpus, split_train_test, Corpus, LabelRegistry};
use rationale::evaluation::evaluate_model;
use rationale::knowledge::{build_knowledge_base, FixtureDocuments, KnowledgeBase};
use rationale::teacher::{
    distill_rationales, Exemplars, MockScript, MockTeacher, RetryPolicy, TeacherClient,
};
use rationale::training::{
    load_checkpoint, phase_mode, phase_target, resume_pipeline, run_pipeline, sha256_hex, Ablations,
    PipelineConfig, PipelineOutcome,
};
use rationale::Error;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{
    Ablate, BuildKbArgs, CaptionArgs, Command, CorpusArgs, DistillArgs, EvalArgs, EvalMode,
    GenDataArgs, PhaseChoice, PipelineArgs, Split, TeacherArgs, TeacherChoice, TrainArgs,
    TrainingArgs,
};

const DEFAULT_SEED: u64 = 7;
const DEFAULT_PARALLELISM: usize = 4;

/// A failure that carries its own exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(r) = cause.downcast_ref::<Error>() {
            return r.exit_code() as u8;
        }
    }
    2
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    Error::Config(message.into()).into()
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Caption(a) => caption(a),
        Command::BuildKb(a) => build_kb(a),
        Command::Distill(a) => distill(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn registry(path: Option<&Path>) -> Result<LabelRegistry> {
    Ok(match path {
        Some(p) => LabelRegistry::load(p)?,
        None => LabelRegistry::bundled(),
    })
}

fn load_corpus(args: &CorpusArgs, cfg: &RunConfig) -> Result<Corpus> {
    let path = args
        .corpus
        .as_ref()
        .or(cfg.paths.corpus.as_ref())
        .ok_or_else(|| usage("--corpus is required"))?;
    let reg = registry(args.registry.as_deref().or(cfg.paths.registry.as_deref()))?;
    let split_seed = args
        .split_seed
        .or(cfg.data.split_seed)
        .unwrap_or(Corpus::DEFAULT_SPLIT_SEED);
    Ok(load_corpus_with(path, &reg, split_seed)?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn file_sha(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let reg = LabelRegistry::bundled();
    let corpus = generate_synthetic_corpus(a.n, a.seed, &reg)?;
    ensure_parent(&a.out)?;
    save_corpus(&corpus, &a.out)?;
    let reg_path = a
        .registry_out
        .unwrap_or_else(|| a.out.with_file_name("labels.json"));
    reg.save(&reg_path)?;
    log::info!("wrote {} records to {}", corpus.len(), a.out.display());
    Ok(())
}

fn caption_lines(corpus: &Corpus) -> Result<String> {
    let mut out = String::new();
    for r in &corpus.records {
        let set = caption_labs(&r.labs);
        out.push_str(&serde_json::to_string(&json!({"id": r.record_id, "captions": set.captions}))?);
        out.push('\n');
    }
    Ok(out)
}

fn caption(a: CaptionArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus, &RunConfig::default())?;
    ensure_parent(&a.out)?;
    rationale::io::atomic_write(&a.out, caption_lines(&corpus)?.as_bytes())?;
    log::info!("captioned {} records", corpus.len());
    Ok(())
}

fn read_captions(path: &Path, corpus: &Corpus) -> Result<Vec<CaptionSet>> {
    #[derive(serde::Deserialize)]
    struct Line {
        id: String,
        captions: Vec<String>,
    }
    let text = rationale::io::read_to_string(path)?;
    let mut by_id = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let l: Line = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        by_id.insert(l.id, l.captions);
    }
    corpus
        .records
        .iter()
        .map(|r| {
            by_id
                .remove(&r.record_id)
                .map(|captions| CaptionSet { captions })
                .ok_or_else(|| {
                    Error::Schema(format!("no captions for record {:?}", r.record_id)).into()
                })
        })
        .collect()
}

fn exemplars(path: Option<&Path>) -> Result<Exemplars> {
    Ok(match path {
        Some(p) => Exemplars::load(p)?,
        None => Exemplars::bundled(),
    })
}

fn teacher_client(t: &TeacherArgs, cfg: &RunConfig, reg: &LabelRegistry) -> Result<TeacherClient> {
    let attempts = t.max_attempts.or(cfg.teacher.max_attempts).unwrap_or(3);
    if attempts == 0 {
        return Err(usage("max attempts must be at least 1"));
    }
    Ok(match t.mode {
        TeacherChoice::Mock => {
            let seed = t.mock_seed.or(cfg.teacher.mock_seed).unwrap_or(0);
            let mut client = TeacherClient::mock(MockTeacher::new(MockScript::synthetic(reg), seed));
            client.retry = RetryPolicy::immediate(attempts);
            client
        }
        TeacherChoice::Remote => {
            let retry = RetryPolicy {
                max_attempts: attempts,
                ..RetryPolicy::default()
            };
            TeacherClient::remote(cfg.remote()?, retry)
        }
    })
}

fn parallelism(flag: Option<usize>, cfg: &RunConfig) -> usize {
    flag.or(cfg.teacher.parallelism).unwrap_or(DEFAULT_PARALLELISM)
}

fn build_kb(a: BuildKbArgs) -> Result<()> {
    let cfg = RunConfig::load(a.teacher.config.as_deref())?;
    let reg = registry(a.registry.as_deref().or(cfg.paths.registry.as_deref()))?;
    let docs = match a.documents.as_deref().or(cfg.paths.documents.as_deref()) {
        Some(p) => FixtureDocuments::load(p)?,
        None => FixtureDocuments::bundled(),
    };
    let client = teacher_client(&a.teacher, &cfg, &reg)?;
    let ex = exemplars(a.teacher.exemplars.as_deref().or(cfg.paths.exemplars.as_deref()))?;
    let kb = build_knowledge_base(
        &reg,
        &docs,
        &client,
        &ex,
        a.max_rounds,
        parallelism(a.teacher.parallelism, &cfg),
    )?;
    ensure_parent(&a.out)?;
    kb.save(&a.out)?;
    log::info!(
        "knowledge base: {} diseases, {} terms, {} teacher calls",
        kb.diseases.len(),
        kb.all_terms().len(),
        client.calls()
    );
    Ok(())
}

fn distill(a: DistillArgs) -> Result<()> {
    let cfg = RunConfig::load(a.teacher.config.as_deref())?;
    let input = load_corpus(&a.corpus, &cfg)?;
    let corpus = if a.resume && a.out.exists() {
        let done = load_corpus_with(&a.out, &input.registry, input.split_seed)?;
        let ids = |c: &Corpus| c.records.iter().map(|r| r.record_id.clone()).collect::<Vec<_>>();
        if ids(&done) != ids(&input) {
            return Err(Error::Schema(format!(
                "{} does not hold the same records as the input corpus",
                a.out.display()
            ))
            .into());
        }
        done
    } else {
        input
    };
    let captions = match &a.captions {
        Some(p) => read_captions(p, &corpus)?,
        None => corpus.records.iter().map(|r| caption_labs(&r.labs)).collect(),
    };
    let client = teacher_client(&a.teacher, &cfg, &corpus.registry)?;
    let ex = exemplars(a.teacher.exemplars.as_deref().or(cfg.paths.exemplars.as_deref()))?;
    let outcome = distill_rationales(
        &corpus,
        &captions,
        &client,
        &ex,
        parallelism(a.teacher.parallelism, &cfg),
    )?;
    ensure_parent(&a.out)?;
    save_corpus(&outcome.corpus, &a.out)?;
    log::info!(
        "distilled {} records with {} teacher calls",
        outcome.corpus.len() - outcome.failed.len(),
        outcome.teacher_calls
    );
    if !outcome.failed.is_empty() {
        return Err(Failure {
            code: 3,
            message: format!(
                "{} records are missing rationales (first: {}: {}); rerun with --resume",
                outcome.failed.len(),
                outcome.failed[0].0,
                outcome.failed[0].1
            ),
        }
        .into());
    }
    Ok(())
}

fn ablations(a: Option<Ablate>) -> Ablations {
    let mut out = Ablations::none();
    match a {
        Some(Ablate::Know) => out.without_know = true,
        Some(Ablate::Reasoning) => out.without_reasoning = true,
        Some(Ablate::LabKnow) => out.without_lab_and_know = true,
        None => {}
    }
    out
}

fn schedule(t: &TrainingArgs, cfg: &RunConfig) -> Result<PipelineConfig> {
    let seed = t.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let mut p = cfg.pipeline(seed, t.threads, ablations(t.ablate))?;
    if let Some(e) = &t.epochs {
        if e.len() != 3 {
            return Err(usage(format!("--epochs needs 3 values, got {}", e.len())));
        }
        for (phase, &n) in p.phases.iter_mut().zip(e) {
            phase.epochs = n;
        }
    }
    p.validate()?;
    Ok(p)
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.paths.out.clone())
        .ok_or_else(|| usage("--out is required"))?;
    ensure_dir(&dir)?;
    Ok(dir)
}

fn report(outcome: &PipelineOutcome, dir: &Path) -> Result<()> {
    let path = dir.join("report.json");
    rationale::io::write_json(&path, &outcome.report)?;
    println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    log::info!(
        "{} phase(s) done; checkpoint {}",
        outcome.manifest.phases.len(),
        outcome.final_checkpoint.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(a.training.config.as_deref())?;
    let mut sched = schedule(&a.training, &cfg)?;
    let corpus = load_corpus(&a.corpus, &cfg)?;
    let (train_split, test_split) = split_train_test(&corpus)?;
    let dir = out_dir(a.out, &cfg)?;
    let mut inputs = BTreeMap::new();
    if let Some(p) = a.corpus.corpus.as_ref().or(cfg.paths.corpus.as_ref()) {
        inputs.insert("corpus_sha256".into(), Value::from(file_sha(p)?));
    }
    let first = match a.phase {
        PhaseChoice::One => 1,
        PhaseChoice::Two => 2,
        PhaseChoice::Three => 3,
        PhaseChoice::All => 1,
    };
    if a.phase != PhaseChoice::All {
        sched.phases.retain(|p| p.phase == first);
        if sched.phases.is_empty() {
            return Err(usage(format!(
                "phase {first} does not run under the {} ablation",
                sched.ablations.name()
            )));
        }
    }
    let outcome = if first == 1 {
        let kb_path = a.kb.as_ref().or(cfg.paths.kb.as_ref());
        let kb = match kb_path {
            Some(p) => {
                inputs.insert("kb_sha256".into(), Value::from(file_sha(p)?));
                KnowledgeBase::load(p)?
            }
            None if sched.ablations.without_lab_and_know || sched.ablations.without_know => {
                KnowledgeBase::default()
            }
            None => return Err(usage("--kb is required")),
        };
        run_pipeline(&train_split, &test_split, &kb, &sched, &dir, inputs)?
    } else {
        let ckpt = a
            .checkpoint
            .unwrap_or_else(|| dir.join(format!("phase{}.ckpt", first - 1)));
        let state = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
        inputs.insert(
            "resumed_from".into(),
            Value::from(state.provenance.loaded_from.clone()),
        );
        resume_pipeline(&train_split, &test_split, state, &sched, &dir, inputs)?
    };
    report(&outcome, &dir)
}

fn eval(a: EvalArgs) -> Result<()> {
    if !a.checkpoint.is_file() {
        return Err(Error::Precondition(format!(
            "checkpoint {} does not exist",
            a.checkpoint.display()
        ))
        .into());
    }
    let state = load_checkpoint(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus, &RunConfig::default())?;
    let records = match a.split {
        Split::All => corpus,
        Split::Train => split_train_test(&corpus)?.0,
        Split::Test => split_train_test(&corpus)?.1,
    };
    let phase = match a.mode {
        Some(EvalMode::Phase1) => 1,
        Some(EvalMode::Phase2) => 2,
        Some(EvalMode::Phase3) => 3,
        None => state.phase.max(1),
    };
    let kind = phase_target(phase, state.provenance.ablations.without_reasoning);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads.max(1))
        .build()?;
    let report = pool.install(|| {
        evaluate_model(&state.model, &records, &state.vk, phase_mode(phase), kind, a.seed)
    })?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let cfg = RunConfig::load(a.training.config.as_deref())?;
    let sched = schedule(&a.training, &cfg)?;
    let dir = out_dir(a.out, &cfg)?;
    let reg = registry(a.registry.as_deref().or(cfg.paths.registry.as_deref()))?;
    let split_seed = cfg.data.split_seed.unwrap_or(Corpus::DEFAULT_SPLIT_SEED);
    let mut inputs = BTreeMap::new();

    let raw = match a.corpus.as_ref().or(cfg.paths.corpus.as_ref()) {
        Some(p) => load_corpus_with(p, &reg, split_seed)?,
        None => {
            let n = a.n.or(cfg.data.n).unwrap_or(2000);
            let seed = a.data_seed.or(cfg.data.seed).unwrap_or(DEFAULT_SEED);
            inputs.insert("data_n".into(), Value::from(n));
            inputs.insert("data_seed".into(), Value::from(seed));
            let mut c = generate_synthetic_corpus(n, seed, &reg)?;
            c.split_seed = split_seed;
            c
        }
    };
    let corpus_path = dir.join("corpus.jsonl");
    save_corpus(&raw, &corpus_path)?;
    inputs.insert(
        "corpus_sha256".into(),
        Value::from(sha256_hex(render_corpus(&raw)?.as_bytes())),
    );

    let captions: Vec<CaptionSet> = raw.records.iter().map(|r| caption_labs(&r.labs)).collect();
    rationale::io::atomic_write(&dir.join("captions.jsonl"), caption_lines(&raw)?.as_bytes())?;

    let teacher = TeacherArgs {
        mode: TeacherChoice::Mock,
        parallelism: a.parallelism,
        max_attempts: None,
        mock_seed: None,
        exemplars: None,
        config: None,
    };
    let client = teacher_client(&teacher, &cfg, &reg)?;
    let ex = exemplars(cfg.paths.exemplars.as_deref())?;
    let par = parallelism(a.parallelism, &cfg);
    let docs = match cfg.paths.documents.as_deref() {
        Some(p) => FixtureDocuments::load(p)?,
        None => FixtureDocuments::bundled(),
    };
    let kb = build_knowledge_base(
        &reg,
        &docs,
        &client,
        &ex,
        rationale::knowledge::DEFAULT_MAX_ROUNDS,
        par,
    )?;
    let kb_path = dir.join("kb.json");
    kb.save(&kb_path)?;
    inputs.insert("kb_sha256".into(), Value::from(file_sha(&kb_path)?));

    let outcome = distill_rationales(&raw, &captions, &client, &ex, par)?;
    if !outcome.failed.is_empty() {
        return Err(Failure {
            code: 3,
            message: format!("{} records are missing rationales", outcome.failed.len()),
        }
        .into());
    }
    let distilled_path = dir.join("distilled.jsonl");
    save_corpus(&outcome.corpus, &distilled_path)?;
    inputs.insert("distilled_sha256".into(), Value::from(file_sha(&distilled_path)?));
    inputs.insert("teacher".into(), Value::from("mock"));
    inputs.insert("teacher_calls".into(), Value::from(client.calls()));

    let (train_split, test_split) = split_train_test(&outcome.corpus)?;
    let run = run_pipeline(&train_split, &test_split, &kb, &sched, &dir, inputs)?;
    report(&run, &dir)
}
