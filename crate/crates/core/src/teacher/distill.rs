use rayon::prelude::*;

use super::prompts::{build_lab_rationale_prompt, build_note_rationale_prompt, Exemplars};
use super::TeacherClient;
use crate::caption::CaptionSet;
use crate::corpus::{Corpus, EhrRecord};
use crate::{Error, Result};

pub const NOTE_PREFIX: &str = "Based on the medical notes";
pub const LAB_PREFIX: &str = "Lab test shows";
/// The note rationale the prompt asks for when nothing was diagnosed.
pub const NO_DISEASE_RATIONALE: &str = "no disease was diagnosed.";

/// Accepts a note rationale that opens with [`NOTE_PREFIX`], or, for a record
/// without diagnoses, one that states that no disease was diagnosed.
pub fn validate_note_rationale(text: &str, diagnoses: &[String]) -> Result<String, String> {
    let t = text.trim();
    if t.starts_with(NOTE_PREFIX) {
        return Ok(t.to_string());
    }
    if diagnoses.is_empty() && t.to_lowercase().starts_with("no disease was diagnosed") {
        return Ok(t.to_string());
    }
    Err(format!("note rationale must start with {NOTE_PREFIX:?}: {t:?}"))
}

pub fn validate_lab_rationale(text: &str) -> Result<String, String> {
    let t = text.trim();
    if t.starts_with(LAB_PREFIX) {
        Ok(t.to_string())
    } else {
        Err(format!("lab rationale must start with {LAB_PREFIX:?}: {t:?}"))
    }
}

#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub corpus: Corpus,
    /// `(record id, reason)` for records left without both rationales.
    pub failed: Vec<(String, String)>,
    pub teacher_calls: u64,
}

/// Adds the note rationale and then the lab rationale to every record that
/// lacks them. Records already holding both are left alone without a
/// teacher call. A record whose teacher calls are exhausted keeps whatever
/// was accepted and is reported in `failed`.
pub fn distill_rationales(
    corpus: &Corpus,
    captions: &[CaptionSet],
    client: &TeacherClient,
    exemplars: &Exemplars,
    parallelism: usize,
) -> Result<DistillOutcome> {
    if captions.len() != corpus.len() {
        return Err(Error::Precondition(format!(
            "{} caption sets for {} records",
            captions.len(),
            corpus.len()
        )));
    }
    let calls_before = client.calls();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    let results: Vec<Result<(EhrRecord, Option<String>)>> = pool.install(|| {
        corpus
            .records
            .par_iter()
            .zip(captions.par_iter())
            .map(|(rec, cap)| distill_one(rec, cap, client, exemplars))
            .collect()
    });
    let mut records = Vec::with_capacity(corpus.len());
    let mut failed = Vec::new();
    for r in results {
        let (rec, failure) = r?;
        if let Some(why) = failure {
            log::warn!("record {}: {why}", rec.record_id);
            failed.push((rec.record_id.clone(), why));
        }
        records.push(rec);
    }
    Ok(DistillOutcome {
        corpus: corpus.with_records(records),
        failed,
        teacher_calls: client.calls() - calls_before,
    })
}

fn distill_one(
    rec: &EhrRecord,
    captions: &CaptionSet,
    client: &TeacherClient,
    exemplars: &Exemplars,
) -> Result<(EhrRecord, Option<String>)> {
    let mut out = rec.clone();
    if out.has_rationales() {
        return Ok((out, None));
    }
    if out.note_rationale.is_none() {
        let prompt = build_note_rationale_prompt(&out, exemplars)?;
        match client.complete_with(&prompt, |t| validate_note_rationale(t, &out.diagnoses)) {
            Ok(rm) => out.note_rationale = Some(rm),
            Err(e) => return Ok((out, Some(e.to_string()))),
        }
    }
    let prompt =
        build_lab_rationale_prompt(&out, captions, out.note_rationale.as_deref(), exemplars)?;
    match client.complete_with(&prompt, validate_lab_rationale) {
        Ok(rt) => out.lab_rationale = Some(rt),
        Err(e) => return Ok((out, Some(e.to_string()))),
    }
    Ok((out, None))
}
