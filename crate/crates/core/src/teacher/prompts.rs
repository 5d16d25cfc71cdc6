//! Prompt templates and their slot renderer.
//!
//! Slots are written `{{NAME}}`. Rendering is a single left-to-right pass, so
//! slot markers inside substituted text are never expanded.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::caption::CaptionSet;
use crate::corpus::EhrRecord;
use crate::{Error, Result};

const NOTE_BODY: &str = include_str!("../../resources/prompts/note_rationale.txt");
const LAB_BODY: &str = include_str!("../../resources/prompts/lab_rationale.txt");
const TERM_BODY: &str = include_str!("../../resources/prompts/term_extraction.txt");
const BUNDLED_EXEMPLARS: &str = include_str!("../../resources/exemplars.json");

/// What the diagnoses slot says when the label set is empty.
pub const NO_DISEASE: &str = "no disease was diagnosed";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptKind {
    NoteRationale,
    LabRationale,
    TermExtraction,
}

/// Example texts shown to the teacher, one list per prompt kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplars {
    pub note_rationale: Vec<String>,
    pub lab_rationale: Vec<String>,
    pub term_extraction: Vec<String>,
}

impl Exemplars {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_EXEMPLARS).expect("bundled exemplars are valid JSON")
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn for_kind(&self, kind: PromptKind) -> &[String] {
        match kind {
            PromptKind::NoteRationale => &self.note_rationale,
            PromptKind::LabRationale => &self.lab_rationale,
            PromptKind::TermExtraction => &self.term_extraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub exemplars: Vec<String>,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind, exemplars: &Exemplars) -> Self {
        let body = match kind {
            PromptKind::NoteRationale => NOTE_BODY,
            PromptKind::LabRationale => LAB_BODY,
            PromptKind::TermExtraction => TERM_BODY,
        };
        Self {
            kind,
            exemplars: exemplars.for_kind(kind).to_vec(),
            body: body.trim_end_matches('\n').to_string(),
        }
    }

    /// Fills `{{O}}` from the exemplars and the remaining slots from `slots`.
    pub fn render(&self, slots: &[(&str, &str)]) -> Result<String> {
        let examples = render_exemplars(&self.exemplars);
        let mut all = vec![("O", examples.as_str())];
        all.extend_from_slice(slots);
        render_slots(&self.body, &all)
    }
}

fn render_exemplars(exemplars: &[String]) -> String {
    exemplars
        .iter()
        .enumerate()
        .map(|(i, e)| format!("Example {}: {e}", i + 1))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Replaces every `{{NAME}}` in `body`. A slot without a value, or an
/// unterminated marker, is a template error.
pub fn render_slots(body: &str, slots: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(body.len() * 2);
    let mut rest = body;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| Error::Template("unterminated slot marker".into()))?;
        let name = &after[..close];
        let value = slots
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Template(format!("slot {{{{{name}}}}} has no value")))?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// The diagnoses slot: labels in registry order joined by `"; "`.
pub fn render_diagnoses(diagnoses: &[String]) -> String {
    if diagnoses.is_empty() {
        NO_DISEASE.to_string()
    } else {
        diagnoses.join("; ")
    }
}

pub fn build_note_rationale_prompt(record: &EhrRecord, exemplars: &Exemplars) -> Result<String> {
    if record.note.trim().is_empty() {
        return Err(Error::Precondition(format!(
            "record {:?} has an empty note",
            record.record_id
        )));
    }
    let d = render_diagnoses(&record.diagnoses);
    PromptTemplate::new(PromptKind::NoteRationale, exemplars)
        .render(&[("M", record.note.as_str()), ("D", d.as_str())])
}

pub fn build_lab_rationale_prompt(
    record: &EhrRecord,
    captions: &CaptionSet,
    note_rationale: Option<&str>,
    exemplars: &Exemplars,
) -> Result<String> {
    let rm = note_rationale.ok_or_else(|| {
        Error::Ordering(format!(
            "record {:?}: the lab rationale prompt needs the note rationale first",
            record.record_id
        ))
    })?;
    let d = render_diagnoses(&record.diagnoses);
    let t = captions.joined();
    PromptTemplate::new(PromptKind::LabRationale, exemplars).render(&[
        ("M", record.note.as_str()),
        ("T*", t.as_str()),
        ("D", d.as_str()),
        ("R^m", rm),
    ])
}

pub fn build_term_prompt(
    disease: &str,
    documents: &[String],
    known_terms: &[String],
    exemplars: &Exemplars,
) -> Result<String> {
    let docs = documents
        .iter()
        .map(|d| format!("- {}", d.replace('\n', " ")))
        .collect::<Vec<_>>()
        .join("\n");
    let terms = if known_terms.is_empty() {
        "none".to_string()
    } else {
        known_terms.join("; ")
    };
    PromptTemplate::new(PromptKind::TermExtraction, exemplars).render(&[
        ("DISEASE", disease),
        ("DOCS", docs.as_str()),
        ("TERMS", terms.as_str()),
    ])
}

/// Text between `start` and the next blank line (or the end) within the
/// input section of a rendered prompt.
pub(crate) fn input_field<'a>(prompt: &'a str, start: &str) -> Option<&'a str> {
    let input = &prompt[prompt.rfind("### Input:")?..];
    let from = input.find(start)? + start.len();
    let tail = &input[from..];
    Some(tail.find("\n\n").map_or(tail, |end| &tail[..end]))
}
