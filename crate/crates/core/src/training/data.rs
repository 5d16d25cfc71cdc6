use crate::corpus::{Corpus, LabelRegistry};
use crate::knowledge::KnowledgeBase;
use crate::model::target::{serialize_target, TargetKind, MARKER, NONE};
use crate::model::tokenizer::{split_words, Tokenizer};
use crate::model::{ModelInput, RationaleModel};
use crate::{Error, Result};

pub const DEFAULT_MAX_VOCAB: usize = 4000;

/// One record ready for training.
#[derive(Clone, Debug)]
pub struct Example {
    pub record_id: String,
    pub input: ModelInput,
    /// Target ids ending in `<eos>`.
    pub targets: Vec<usize>,
    pub kind: TargetKind,
}

/// Builds the word vocabulary from training notes and targets. Knowledge
/// terms, label words and the target punctuation are always kept.
pub fn build_tokenizer(
    train: &Corpus,
    kb: Option<&KnowledgeBase>,
    registry: &LabelRegistry,
    max_vocab: usize,
) -> Result<Tokenizer> {
    let mut texts = Vec::with_capacity(train.len() * 2);
    for r in &train.records {
        texts.push(r.note.clone());
        let kind = if r.has_rationales() {
            TargetKind::Full
        } else {
            TargetKind::LabelsOnly
        };
        texts.push(serialize_target(
            &r.diagnoses,
            r.note_rationale.as_deref(),
            r.lab_rationale.as_deref(),
            kind,
        )?);
    }
    let mut forced: Vec<String> = Vec::new();
    for l in registry.labels() {
        forced.extend(split_words(l));
    }
    if let Some(kb) = kb {
        for t in kb.all_terms() {
            forced.extend(split_words(&t));
        }
    }
    forced.extend(split_words(&format!("{MARKER} {NONE} ; .")));
    forced.sort();
    forced.dedup();
    let tok = Tokenizer::build(texts.iter().map(String::as_str), &forced, max_vocab);
    if let Some(w) = forced.iter().find(|w| tok.id(w).is_none()) {
        return Err(Error::Config(format!(
            "max_vocab {max_vocab} is too small to hold required word {w:?}"
        )));
    }
    Ok(tok)
}

/// Encodes inputs and targets (truncated, ending in `<eos>`). A record without the rationales `kind`
/// needs is a data error.
pub fn prepare_examples(corpus: &Corpus, model: &RationaleModel, kind: TargetKind) -> Result<Vec<Example>> {
    corpus
        .records
        .iter()
        .map(|r| {
            let text = serialize_target(
                &r.diagnoses,
                r.note_rationale.as_deref(),
                r.lab_rationale.as_deref(),
                kind,
            )
            .map_err(|_| Error::Schema(format!("record {} lacks distilled rationales", r.record_id)))?;
            Ok(Example {
                record_id: r.record_id.clone(),
                input: ModelInput::from_record(r, &model.tokenizer)?,
                targets: model.target_ids(&text),
                kind,
            })
        })
        .collect()
}
