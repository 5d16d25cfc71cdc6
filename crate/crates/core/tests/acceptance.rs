//! One pass/fail line per acceptance criterion. Pass criterion numbers as
//! arguments to run a subset.

#[path = "../../numerics/tests/op_cases/mod.rs"]
mod op_cases;

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{fixture, golden, metric_oracle, planted_oracle_labels, Fixture};
use numerics::{ParamGroup, ParamStore, Real, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rationale::caption::caption_labs;
use rationale::corpus::synth::generate_with_truth;
use rationale::corpus::{pad_and_patch, split_train_test, LabelRegistry, NUM_PATCHES, PATCH_LEN};
use rationale::evaluation::{bleu, micro_macro_prf};
use rationale::knowledge::{build_knowledge_base, FixtureDocuments};
use rationale::model::tokenizer::{split_words, Tokenizer};
use rationale::model::{InputMode, ModelInput};
use rationale::teacher::distill_rationales;
use rationale::teacher::prompts::Exemplars;
use rationale::training::{
    comparable, prepare_examples, run_pipeline, train_phase, Ablations, PhaseConfig, PipelineConfig, PipelineOutcome,
    TrainState,
};
use rationale::Error;

const GRAD_TOL: Real = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const PIPELINE_BUDGET: Duration = Duration::from_secs(15 * 60);
const MIN_MICRO_F1: f64 = 0.85;
const ROW_SUM_TOL: Real = 1e-10;
const BLEU_TOL: f64 = 1e-12;
const SEEDS: [u64; 3] = [7, 8, 9];

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let ops = op_cases::all();
    let (op, op_err) = ops.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    ensure(op_err < GRAD_TOL, format!("op {op}: relative error {op_err:.2e}"))?;
    let f = fixture(20, 31);
    let mut worst = Vec::new();
    for phase in 1..=3u8 {
        let (err, at) = common::phase_grad_error(&f, phase, 3);
        ensure(err < GRAD_TOL, format!("phase {phase} loss: relative error {err:.2e} at {at}"))?;
        worst.push(format!("phase{phase} {err:.1e}"));
    }
    let took = t.elapsed();
    ensure(took < GRAD_BUDGET, format!("took {took:?}"))?;
    Ok(format!(
        "{} ops max {op_err:.1e}; {}; {:.1}s",
        ops.len(),
        worst.join(", "),
        took.as_secs_f64()
    ))
}

fn snapshot(store: &ParamStore, group: ParamGroup) -> Vec<u64> {
    store
        .iter()
        .filter(|(_, p)| p.group == group)
        .flat_map(|(_, p)| p.tensor.data().iter().map(|x| x.to_bits()))
        .collect()
}

fn fresh(f: &Fixture) -> TrainState {
    common::state_with(f, &rationale::training::ModelSettings::default(), 11, Ablations::none())
}

fn steps(phase: u8, n: u64) -> PhaseConfig {
    PhaseConfig {
        epochs: 1,
        batch_size: 1,
        max_steps: Some(n),
        seed: 11,
        ..PhaseConfig::toy(phase)
    }
}

fn freezing() -> Outcome {
    let f = fixture(150, 4);
    let run = |s: &mut TrainState, cfg: &PhaseConfig| {
        let ex = prepare_examples(&f.train, &s.model, cfg.target_kind()).unwrap();
        train_phase(s, &ex, cfg, None)
    };
    let mut s = fresh(&f);
    let fusion = snapshot(&s.model.store, ParamGroup::Fusion);
    run(&mut s, &steps(1, 100)).map_err(|e| e.to_string())?;
    ensure(snapshot(&s.model.store, ParamGroup::Fusion) == fusion, "phase 1 changed the fusion weights")?;
    let slm = snapshot(&s.model.store, ParamGroup::Slm);
    let fusion = snapshot(&s.model.store, ParamGroup::Fusion);
    let sum = run(&mut s, &steps(2, 100)).map_err(|e| e.to_string())?;
    ensure(sum.step_end - sum.step_start == 100, "phase 2 did not take 100 steps")?;
    ensure(snapshot(&s.model.store, ParamGroup::Slm) == slm, "phase 2 changed the language model")?;
    ensure(snapshot(&s.model.store, ParamGroup::Fusion) != fusion, "phase 2 did not train the fusion weights")?;

    let mut s = fresh(&f);
    let cfg = steps(1, 5);
    let ex = prepare_examples(&f.train, &s.model, cfg.target_kind()).unwrap();
    let mut hook = |_: u64, store: &mut ParamStore| {
        let id = store.id("ka.wv").unwrap();
        store.tensor_mut(id).data_mut()[0] += 1e-9;
    };
    match train_phase(&mut s, &ex, &cfg, Some(&mut hook)) {
        Err(Error::FrozenMutation { .. }) => {}
        other => return Err(format!("mutating a frozen tensor gave {:?}", other.map(|_| ()))),
    }
    Ok("100 phase-2 steps leave theta bitwise equal; phase 1 leaves phi; a frozen write fails".into())
}

fn goldens() -> Outcome {
    #[derive(serde::Deserialize)]
    struct Case {
        feature: String,
        values: Vec<f64>,
        caption: String,
    }
    #[derive(serde::Deserialize)]
    struct Cases {
        cases: Vec<Case>,
    }
    let fx: Cases = serde_json::from_str(include_str!("fixtures/captions.json")).unwrap();
    for c in &fx.cases {
        let labs = rationale::corpus::LabSeries::new(vec![c.feature.clone()], vec![c.values.clone()]).unwrap();
        let got = caption_labs(&labs).captions;
        ensure(got == [c.caption.clone()], format!("caption {:?} != {:?}", got, c.caption))?;
    }
    golden::matches("note_rationale.txt", &golden::note_prompt(), golden::NOTE_INSTRUCTION)?;
    golden::matches("lab_rationale.txt", &golden::lab_prompt(), golden::LAB_INSTRUCTION)?;
    Ok(format!("{} captions and both prompt goldens byte-exact", fx.cases.len()))
}

fn metrics() -> Outcome {
    let reg = LabelRegistry::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let n = rng.random_range(1..40);
        let golds: Vec<_> = (0..n).map(|_| metric_oracle::random_set(&mut rng, &reg, 4)).collect();
        let preds: Vec<_> = (0..n).map(|_| metric_oracle::random_set(&mut rng, &reg, 4)).collect();
        let got = micro_macro_prf(&preds, &golds, &reg).map_err(|e| e.to_string())?;
        ensure(got == metric_oracle::brute_force(&preds, &golds, &reg), format!("case {case} differs"))?;
    }
    let x = vec!["lab test shows very high glucose".to_string(), "the cat sat".to_string()];
    ensure(bleu(&x, &x).map_err(|e| e.to_string())? == 1.0, "bleu(x, x) != 1")?;
    let (recorded, table, got) = metric_oracle::worksheet_bleu();
    ensure((table - recorded).abs() < BLEU_TOL && (got - table).abs() < BLEU_TOL, format!("bleu {got} vs {table}"))?;
    Ok(format!("200 cases exact; bleu(x,x)=1; worksheet {got:.12}"))
}

/// The seed-7, n = 2000 corpus distilled by the mock teacher.
struct Study {
    train: rationale::corpus::Corpus,
    test: rationale::corpus::Corpus,
    kb: rationale::knowledge::KnowledgeBase,
    prep: Duration,
}

fn study() -> Result<Study, String> {
    let t = Instant::now();
    let reg = LabelRegistry::bundled();
    let (raw, _) = generate_with_truth(2000, 7, &reg).map_err(|e| e.to_string())?;
    let preds: Vec<Vec<String>> = raw.records.iter().map(|r| planted_oracle_labels(r, &reg)).collect();
    let golds: Vec<Vec<String>> = raw.records.iter().map(|r| r.diagnoses.clone()).collect();
    let oracle = micro_macro_prf(&preds, &golds, &reg).map_err(|e| e.to_string())?.micro_f1;
    ensure(oracle == 1.0, format!("planted oracle F1 {oracle}"))?;
    let captions: Vec<_> = raw.records.iter().map(|r| caption_labs(&r.labs)).collect();
    let client = common::mock_client(&reg);
    let ex = Exemplars::bundled();
    let corpus = distill_rationales(&raw, &captions, &client, &ex, 1).map_err(|e| e.to_string())?.corpus;
    let kb = build_knowledge_base(&reg, &FixtureDocuments::bundled(), &client, &ex, 5, 1).map_err(|e| e.to_string())?;
    let (train, test) = split_train_test(&corpus).map_err(|e| e.to_string())?;
    Ok(Study {
        train,
        test,
        kb,
        prep: t.elapsed(),
    })
}

fn train(s: &Study, seed: u64, ablations: Ablations) -> Result<(PipelineOutcome, Duration), String> {
    let t = Instant::now();
    let cfg = PipelineConfig::toy(seed).with_ablations(ablations);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = run_pipeline(&s.train, &s.test, &s.kb, &cfg, dir.path(), BTreeMap::new()).map_err(|e| e.to_string())?;
    Ok((out, t.elapsed()))
}

fn phase_f1(out: &PipelineOutcome, phase: u8) -> f64 {
    out.manifest
        .phases
        .iter()
        .find(|p| p.summary.phase == phase)
        .map_or(f64::NAN, |p| p.metrics.prf.micro_f1)
}

#[derive(Default)]
struct Runs {
    full: Vec<(f64, f64)>,
    know: Vec<f64>,
    reasoning: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn effectiveness(s: &Study, runs: &mut Runs) -> Outcome {
    let (out, took) = train(s, SEEDS[0], Ablations::none())?;
    let f1 = out.report.micro_f1();
    runs.full.push((phase_f1(&out, 1), f1));
    let total = s.prep + took;
    ensure(f1 >= MIN_MICRO_F1, format!("held-out micro-F1 {f1:.4} < {MIN_MICRO_F1}"))?;
    ensure(total < PIPELINE_BUDGET, format!("took {total:?}"))?;
    Ok(format!("planted oracle F1 1.0; micro-F1 {f1:.4} in {:.0}s", total.as_secs_f64()))
}

fn ablations(s: &Study, runs: &mut Runs) -> Outcome {
    let know = Ablations {
        without_know: true,
        ..Ablations::none()
    };
    let reasoning = Ablations {
        without_reasoning: true,
        ..Ablations::none()
    };
    for (i, &seed) in SEEDS.iter().enumerate() {
        if runs.full.len() <= i {
            let (out, _) = train(s, seed, Ablations::none())?;
            runs.full.push((phase_f1(&out, 1), out.report.micro_f1()));
        }
        runs.know.push(train(s, seed, know)?.0.report.micro_f1());
        runs.reasoning.push(train(s, seed, reasoning)?.0.report.micro_f1());
    }
    let full = mean(&runs.full.iter().map(|r| r.1).collect::<Vec<_>>());
    let (k, r) = (mean(&runs.know), mean(&runs.reasoning));
    let line = format!("full {full:.4} >= w/o KNOW {k:.4} >= w/o REASONING {r:.4} (seeds {SEEDS:?})");
    ensure(full >= k && k >= r, line.clone())?;
    Ok(line)
}

fn phase_gain(runs: &Runs) -> Outcome {
    ensure(runs.full.len() == SEEDS.len(), "needs the criterion 6 runs")?;
    let p1 = mean(&runs.full.iter().map(|r| r.0).collect::<Vec<_>>());
    let p3 = mean(&runs.full.iter().map(|r| r.1).collect::<Vec<_>>());
    let line = format!("phase 3 {p3:.4} > phase 1 {p1:.4}");
    ensure(p3 > p1, line.clone())?;
    Ok(line)
}

fn determinism() -> Outcome {
    let f = fixture(200, 21);
    let mut cfg = PipelineConfig::toy(5);
    for p in &mut cfg.phases {
        p.epochs = 1;
    }
    let mut seen = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = run_pipeline(&f.train, &f.test, &f.kb, &cfg, dir.path(), BTreeMap::new()).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&out.final_checkpoint).map_err(|e| e.to_string())?;
        seen.push((comparable(&out.manifest).map_err(|e| e.to_string())?, bytes));
    }
    ensure(seen[0].0 == seen[1].0, "manifests differ")?;
    ensure(seen[0].1 == seen[1].1, "final checkpoints differ")?;
    Ok(format!("manifests equal, {}-byte checkpoints bitwise equal", seen[0].1.len()))
}

fn structure() -> Outcome {
    let f = fixture(40, 2);
    let s = fresh(&f);
    let mut worst: Real = 0.0;
    for r in &f.test.records {
        let grid = pad_and_patch(&r.labs).map_err(|e| e.to_string())?;
        ensure(
            grid.values.len() == NUM_PATCHES && grid.values.iter().all(|row| row.len() == PATCH_LEN * r.labs.n_features()),
            "patch grid is not 125 x 8 steps",
        )?;
        let input = ModelInput::from_record(r, &s.model.tokenizer).map_err(|e| e.to_string())?;
        let mut tape = Tape::inference(&s.model.store);
        let enc = s.model.encoder_input(&mut tape, &input, InputMode::Lab, &s.vk).map_err(|e| e.to_string())?;
        let a = tape.tensor(enc.ka_weights.unwrap());
        for i in 0..a.rows() {
            worst = worst.max((a.row(i).iter().sum::<Real>() - 1.0).abs());
        }
    }
    ensure(worst < ROW_SUM_TOL, format!("attention row sum off by {worst:e}"))?;
    let words: std::collections::BTreeSet<String> = f.kb.all_terms().iter().flat_map(|t| split_words(t)).collect();
    let tok = &s.model.tokenizer;
    ensure(
        s.vk
            .iter()
            .all(|&id| id < tok.len() && !Tokenizer::is_special(id) && words.contains(tok.token(id))),
        "V^k is not a subset of V",
    )?;
    Ok(format!(
        "125 patches of 8; row sums within {worst:.1e}; |V^k| {} of |V| {}",
        s.vk.len(),
        tok.len()
    ))
}

/// Runs `f`, turning a panic into a failure message.
fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() -> ExitCode {
    let picked: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let want = |n: &str| picked.is_empty() || picked.iter().any(|p| p == n);
    let mut failed = 0;
    let mut report = |n: &str, name: &str, outcome: Outcome| match outcome {
        Ok(msg) => println!("PASS [{n}] {name}: {msg}"),
        Err(msg) => {
            failed += 1;
            println!("FAIL [{n}] {name}: {msg}");
        }
    };

    if want("1") {
        report("1", "gradient suite", guarded(gradients));
    }
    if want("2") {
        report("2", "freezing", guarded(freezing));
    }
    if want("3") {
        report("3", "golden captions and prompts", guarded(goldens));
    }
    if want("4") {
        report("4", "metric oracle", guarded(metrics));
    }
    if want("5") || want("6") {
        match guarded(study) {
            Err(e) => report("5", "synthetic effectiveness", Err(e)),
            Ok(s) => {
                let mut runs = Runs::default();
                let out = guarded(|| effectiveness(&s, &mut runs));
                if want("5") {
                    report("5", "synthetic effectiveness", out);
                }
                if want("6") {
                    report("6", "ablation ordering", guarded(|| ablations(&s, &mut runs)));
                    report("6b", "phase 3 over phase 1", guarded(|| phase_gain(&runs)));
                }
            }
        }
    }
    if want("7") {
        report("7", "determinism", guarded(determinism));
    }
    if want("8") {
        report("8", "structure", guarded(structure));
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
