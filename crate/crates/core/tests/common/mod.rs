#![allow(dead_code)]

pub mod golden;
pub mod metric_oracle;

use rationale::caption::caption_labs;
use rationale::corpus::synth::{generate_with_truth, lab_signature, Direction, PlantedTruth};
use rationale::corpus::{split_train_test, Corpus, EhrRecord, LabelRegistry};
use rationale::knowledge::{build_knowledge_base, build_knowledge_vocab, FixtureDocuments, KnowledgeBase};
use rationale::model::RationaleModel;
use rationale::teacher::prompts::Exemplars;
use rationale::teacher::{distill_rationales, MockScript, MockTeacher, TeacherClient};
use rationale::training::{build_tokenizer, Ablations, ModelSettings, TrainState};

pub struct Fixture {
    pub corpus: Corpus,
    pub train: Corpus,
    pub test: Corpus,
    pub kb: KnowledgeBase,
    pub truth: Vec<PlantedTruth>,
}

pub fn mock_client(registry: &LabelRegistry) -> TeacherClient {
    TeacherClient::mock(MockTeacher::new(MockScript::synthetic(registry), 0))
}

/// A synthetic corpus distilled by the mock teacher, split 4:1, plus the
/// knowledge base built from the bundled documents.
pub fn fixture(n: usize, seed: u64) -> Fixture {
    let reg = LabelRegistry::bundled();
    let (raw, truth) = generate_with_truth(n, seed, &reg).unwrap();
    let captions: Vec<_> = raw.records.iter().map(|r| caption_labs(&r.labs)).collect();
    let client = mock_client(&reg);
    let ex = Exemplars::bundled();
    let corpus = distill_rationales(&raw, &captions, &client, &ex, 1).unwrap().corpus;
    let kb = build_knowledge_base(&reg, &FixtureDocuments::bundled(), &client, &ex, 5, 1).unwrap();
    let (train, test) = split_train_test(&corpus).unwrap();
    Fixture {
        corpus,
        train,
        test,
        kb,
        truth,
    }
}

/// d = 8, one layer everywhere.
pub fn tiny_settings(init_std: f64) -> ModelSettings {
    ModelSettings {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ffn: 16,
        max_note_tokens: 48,
        max_target_tokens: 64,
        tse_layers: 1,
        init_std,
        ka_init_std: init_std,
        ..ModelSettings::default()
    }
}

pub fn state_with(f: &Fixture, settings: &ModelSettings, seed: u64, ablations: Ablations) -> TrainState {
    let tok = build_tokenizer(&f.train, Some(&f.kb), &f.train.registry, settings.max_vocab).unwrap();
    let nf = f.train.records[0].labs.n_features();
    let cfg = settings.to_config(tok.len(), nf);
    let vk = if ablations.without_know {
        rationale::knowledge::KnowledgeVocab::full(&tok)
    } else {
        build_knowledge_vocab(&f.kb, &tok)
    };
    let model = RationaleModel::new(cfg, tok, seed).unwrap();
    TrainState::new(model, vk.token_ids, seed, ablations)
}

/// Labels an ideal reader of the inputs would give: keywords in the note,
/// plus every label whose lab signature appears in the captions.
pub fn planted_oracle_labels(record: &EhrRecord, registry: &LabelRegistry) -> Vec<String> {
    let captions = caption_labs(&record.labs);
    let mut hits: Vec<usize> = rationale::corpus::synth::keyword_labels(&record.note);
    for (l, _) in registry.labels().iter().enumerate() {
        let (f, dir) = lab_signature(l);
        let (high, low) = rationale::caption::parse_caption(&captions.captions[f])
            .map(|(_, h, lo)| (h, lo))
            .unwrap_or((0, 0));
        let fired = match dir {
            Direction::High => high > 0,
            Direction::Low => low > 0,
        };
        if fired {
            hits.push(l);
        }
    }
    hits.sort_unstable();
    hits.dedup();
    hits.into_iter().map(|l| registry.label(l).to_string()).collect()
}

/// Worst relative error between the tape gradient of one record's phase
/// loss and central differences, over the `k` largest-gradient coordinates
/// plus `k` random ones of every trainable tensor. Also fails if a frozen
/// tensor receives a gradient.
pub fn phase_grad_error(f: &Fixture, phase: u8, k: usize) -> (f64, String) {
    use numerics::gradcheck::relative_error;
    use numerics::{ParamGroup, ParamStore, Tape};
    use rand::seq::index::sample;
    use rand::SeedableRng;
    use rationale::training::{phase_mode, phase_target, phase_trainable, prepare_examples};

    let mut state = state_with(f, &tiny_settings(0.2), 3, Ablations::none());
    let (slm, fusion) = phase_trainable(phase);
    state.model.store.set_group_trainable(ParamGroup::Slm, slm);
    state.model.store.set_group_trainable(ParamGroup::Fusion, fusion);
    let examples = prepare_examples(&f.train, &state.model, phase_target(phase, false)).unwrap();
    let ex = &examples[0];
    let mode = phase_mode(phase);
    let model = &state.model;
    let vk = &state.vk;
    let loss = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let l = model.forward_loss(&mut tape, &ex.input, mode, vk, &ex.targets).unwrap();
        tape.scalar(l).unwrap()
    };
    let mut tape = Tape::new(&model.store);
    let l = model.forward_loss(&mut tape, &ex.input, mode, vk, &ex.targets).unwrap();
    let grads = tape.backward(l).unwrap();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(phase as u64);
    let mut work = model.store.clone();
    // Losses are O(1) while some coordinates have gradients near 1e-7, so a
    // smaller step loses the difference to roundoff.
    let h = 1e-4;
    let mut worst = (0.0, String::new());
    for (id, p) in model.store.iter() {
        let g = grads.get(id);
        if !p.trainable {
            assert!(g.is_none(), "frozen {} got a gradient in phase {phase}", p.name);
            continue;
        }
        let n = p.tensor.len();
        let zeros = vec![0.0; n];
        let g = g.unwrap_or(&zeros);
        let mut by_mag: Vec<usize> = (0..n).collect();
        by_mag.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        let mut coords: Vec<usize> = by_mag.into_iter().take(k).collect();
        coords.extend(sample(&mut rng, n, k.min(n)).into_iter());
        coords.sort_unstable();
        coords.dedup();
        for i in coords {
            let orig = work.tensor(id).data()[i];
            work.tensor_mut(id).data_mut()[i] = orig + h;
            let plus = loss(&work);
            work.tensor_mut(id).data_mut()[i] = orig - h;
            let minus = loss(&work);
            work.tensor_mut(id).data_mut()[i] = orig;
            let err = relative_error(g[i], (plus - minus) / (2.0 * h), 1e-6);
            if err > worst.0 {
                worst = (err, format!("{}[{i}]", p.name));
            }
        }
    }
    worst
}
