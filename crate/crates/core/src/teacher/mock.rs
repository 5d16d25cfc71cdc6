use crate::caption::parse_caption;
use crate::corpus::synth::{lab_signature, Direction, KEYWORDS, LAB_FEATURES};
use crate::corpus::LabelRegistry;
use crate::TeacherError;

use super::prompts::{input_field, NO_DISEASE};
use super::Teacher;

/// What the mock teacher knows: per-label note keywords and lab signatures,
/// and the lexicon it extracts knowledge terms from.
#[derive(Clone, Debug, PartialEq)]
pub struct MockScript {
    pub labels: Vec<String>,
    pub keywords: Vec<Vec<String>>,
    pub lab_signs: Vec<Vec<(String, Direction)>>,
    pub term_lexicon: Vec<String>,
}

impl MockScript {
    /// The script matching the synthetic corpus generator.
    pub fn synthetic(registry: &LabelRegistry) -> Self {
        let n = registry.len();
        let keywords = (0..n).map(|l| vec![KEYWORDS[l].to_string()]).collect();
        let lab_signs = (0..n)
            .map(|l| {
                let (f, dir) = lab_signature(l);
                vec![(LAB_FEATURES[f].0.to_string(), dir)]
            })
            .collect();
        let mut term_lexicon: Vec<String> = KEYWORDS.iter().map(|k| k.to_string()).collect();
        term_lexicon.extend(LAB_FEATURES.iter().map(|(f, _, _)| f.to_lowercase()));
        term_lexicon.sort();
        Self {
            labels: registry.labels().to_vec(),
            keywords,
            lab_signs,
            term_lexicon,
        }
    }

    fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label.trim())
    }
}

/// A deterministic, prompt-reading teacher. The seed selects among fixed
/// phrasings.
#[derive(Clone, Debug)]
pub struct MockTeacher {
    pub script: MockScript,
    pub seed: u64,
}

impl MockTeacher {
    pub fn new(script: MockScript, seed: u64) -> Self {
        Self { script, seed }
    }

    fn note_rationale(&self, prompt: &str) -> Result<String, TeacherError> {
        let note = field(prompt, "### Medical note: ")?.to_lowercase();
        let d = field(prompt, "### Diagnosed diseases: ")?;
        if d == NO_DISEASE {
            return Ok(format!("{NO_DISEASE}."));
        }
        let mut found = Vec::new();
        for label in d.split("; ") {
            let l = self.label(label)?;
            for kw in &self.script.keywords[l] {
                if note.contains(&kw.to_lowercase()) && !found.contains(kw) {
                    found.push(kw.clone());
                }
            }
        }
        if found.is_empty() {
            return Ok("Based on the medical notes, there are no specific findings.".into());
        }
        let lead = if self.seed % 2 == 0 {
            "the patient has"
        } else {
            "the patient presents with"
        };
        Ok(format!("Based on the medical notes, {lead} {}.", join_and(&found)))
    }

    fn lab_rationale(&self, prompt: &str) -> Result<String, TeacherError> {
        let t = field(prompt, "### Descriptions of lab test abnormalities: ")?;
        let d = field(prompt, "### Diagnosed diseases: ")?;
        let counts: Vec<(String, usize, usize)> =
            split_sentences(t).filter_map(parse_caption).collect();
        let mut phrases = Vec::new();
        if d != NO_DISEASE {
            for label in d.split("; ") {
                let l = self.label(label)?;
                for (feature, dir) in &self.script.lab_signs[l] {
                    let hit = counts.iter().any(|(f, h, lo)| {
                        f == feature
                            && match dir {
                                Direction::High => *h > 0,
                                Direction::Low => *lo > 0,
                            }
                    });
                    if hit {
                        let word = match dir {
                            Direction::High => "higher",
                            Direction::Low => "lower",
                        };
                        let p = format!("{} is {word} than normal", feature.to_lowercase());
                        if !phrases.contains(&p) {
                            phrases.push(p);
                        }
                    }
                }
            }
        }
        if phrases.is_empty() {
            return Ok("Lab test shows no abnormal values.".into());
        }
        let lead = if self.seed % 2 == 0 { "" } else { "that " };
        Ok(format!("Lab test shows {lead}{}.", join_and(&phrases)))
    }

    fn terms(&self, prompt: &str) -> Result<String, TeacherError> {
        let docs = field(prompt, "### Documents:\n")?.to_lowercase();
        let found: Vec<&str> = self
            .script
            .term_lexicon
            .iter()
            .filter(|t| docs.contains(t.as_str()))
            .map(String::as_str)
            .collect();
        Ok(found.join("\n"))
    }

    fn label(&self, label: &str) -> Result<usize, TeacherError> {
        self.script
            .label_index(label)
            .ok_or_else(|| TeacherError::Invalid(format!("mock does not know label {label:?}")))
    }
}

impl Teacher for MockTeacher {
    fn complete(&self, prompt: &str) -> Result<String, TeacherError> {
        let last = prompt.trim_end().lines().last().unwrap_or_default();
        match last {
            "### Medical note-based Rationale:" => self.note_rationale(prompt),
            "### Lab test-based rationale:" => self.lab_rationale(prompt),
            "### Key medical terms:" => self.terms(prompt),
            other => Err(TeacherError::Invalid(format!(
                "mock cannot answer a prompt ending in {other:?}"
            ))),
        }
    }
}

fn field<'a>(prompt: &'a str, start: &str) -> Result<&'a str, TeacherError> {
    input_field(prompt, start)
        .map(str::trim)
        .ok_or_else(|| TeacherError::Invalid(format!("prompt has no {start:?} field")))
}

fn split_sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split_inclusive(". ").map(str::trim_end)
}

fn join_and(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}
