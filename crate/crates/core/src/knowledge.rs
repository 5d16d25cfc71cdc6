//! Disease knowledge base built from reference documents by the teacher,
//! and the knowledge vocabulary derived from it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelRegistry;
use crate::model::tokenizer::{split_words, Tokenizer};
use crate::teacher::prompts::{build_term_prompt, Exemplars};
use crate::teacher::TeacherClient;
use crate::{Error, Result};

const BUNDLED_DOCUMENTS: &str = include_str!("../resources/documents.json");

pub const DEFAULT_MAX_ROUNDS: u32 = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub source: String,
    pub text: String,
}

/// Supplies reference documents per disease.
pub trait DocumentProvider {
    fn documents(&self, disease: &str) -> Vec<Document>;
}

/// Documents held in memory, keyed by label.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureDocuments(pub BTreeMap<String, Vec<Document>>);

impl FixtureDocuments {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_DOCUMENTS).expect("bundled documents are valid JSON")
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }
}

impl DocumentProvider for FixtureDocuments {
    fn documents(&self, disease: &str) -> Vec<Document> {
        self.0.get(disease).cloned().unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseKnowledge {
    pub documents: Vec<Document>,
    /// Sorted, normalised, duplicate-free.
    pub terms: Vec<String>,
    pub rounds: u32,
    pub stable: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeBase {
    pub diseases: BTreeMap<String, DiseaseKnowledge>,
}

impl KnowledgeBase {
    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    /// Every term across diseases, sorted and deduplicated.
    pub fn all_terms(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.diseases.values().flat_map(|d| &d.terms).collect();
        set.into_iter().cloned().collect()
    }
}

/// Lowercases and collapses internal whitespace.
pub fn normalize_term(term: &str) -> String {
    term.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Reads a term list from a teacher reply: one term per line (or separated
/// by `;`), with list bullets and numbering stripped.
pub fn parse_term_list(reply: &str) -> BTreeSet<String> {
    reply
        .lines()
        .flat_map(|l| l.split(';'))
        .map(|t| {
            t.trim()
                .trim_start_matches(['-', '*', '•'])
                .trim_start_matches(|c: char| c.is_ascii_digit())
                .trim_start_matches(['.', ')'])
        })
        .map(normalize_term)
        .filter(|t| !t.is_empty())
        .collect()
}

/// One round of term extraction for one disease.
pub fn extract_terms(
    disease: &str,
    docs: &[String],
    known: &[String],
    teacher: &TeacherClient,
    exemplars: &Exemplars,
) -> Result<BTreeSet<String>> {
    if docs.is_empty() {
        return Err(Error::Precondition(format!("no documents for {disease:?}")));
    }
    let prompt = build_term_prompt(disease, docs, known, exemplars)?;
    Ok(teacher.complete_with(&prompt, |reply| Ok::<_, String>(parse_term_list(reply)))?)
}

/// Repeats extraction per disease, giving the teacher the previous round's
/// set, until two consecutive rounds agree or `max_rounds` is reached.
pub fn build_knowledge_base(
    registry: &LabelRegistry,
    provider: &dyn DocumentProvider,
    teacher: &TeacherClient,
    exemplars: &Exemplars,
    max_rounds: u32,
    parallelism: usize,
) -> Result<KnowledgeBase> {
    if max_rounds == 0 {
        return Err(Error::Precondition("max_rounds must be at least 1".into()));
    }
    let jobs: Vec<(String, Vec<Document>)> = registry
        .labels()
        .iter()
        .map(|l| (l.clone(), provider.documents(l)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    let built: Vec<Result<(String, DiseaseKnowledge)>> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(disease, documents)| {
                let k = iterate_disease(&disease, documents, teacher, exemplars, max_rounds)?;
                Ok((disease, k))
            })
            .collect()
    });
    let mut diseases = BTreeMap::new();
    for r in built {
        let (d, k) = r?;
        diseases.insert(d, k);
    }
    Ok(KnowledgeBase { diseases })
}

fn iterate_disease(
    disease: &str,
    documents: Vec<Document>,
    teacher: &TeacherClient,
    exemplars: &Exemplars,
    max_rounds: u32,
) -> Result<DiseaseKnowledge> {
    let texts: Vec<String> = documents.iter().map(|d| d.text.clone()).collect();
    let partial = |e: Error| match e {
        Error::Teacher(source) => Error::PartialKnowledge {
            disease: disease.to_string(),
            source,
        },
        other => other,
    };
    let mut previous: Option<BTreeSet<String>> = None;
    let mut rounds = 0;
    let mut stable = false;
    while rounds < max_rounds {
        let known: Vec<String> = previous.iter().flatten().cloned().collect();
        let terms = extract_terms(disease, &texts, &known, teacher, exemplars).map_err(partial)?;
        rounds += 1;
        if previous.as_ref() == Some(&terms) {
            stable = true;
            break;
        }
        previous = Some(terms);
    }
    Ok(DiseaseKnowledge {
        documents,
        terms: previous.unwrap_or_default().into_iter().collect(),
        rounds,
        stable,
    })
}

/// The token ids that occur in the tokenisation of some knowledge term.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeVocab {
    /// Ascending.
    pub token_ids: Vec<usize>,
    pub source_terms: BTreeMap<usize, Vec<String>>,
}

impl KnowledgeVocab {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Every non-special token of the tokenizer, used when knowledge
    /// filtering is switched off.
    pub fn full(tokenizer: &Tokenizer) -> Self {
        let token_ids: Vec<usize> = (0..tokenizer.len())
            .filter(|&i| !Tokenizer::is_special(i))
            .collect();
        Self {
            token_ids,
            source_terms: BTreeMap::new(),
        }
    }
}

pub fn build_knowledge_vocab(kb: &KnowledgeBase, tokenizer: &Tokenizer) -> KnowledgeVocab {
    let mut source_terms: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for term in kb.all_terms() {
        for word in split_words(&term) {
            match tokenizer.id(&word) {
                Some(id) if !Tokenizer::is_special(id) => {
                    let terms = source_terms.entry(id).or_default();
                    if !terms.contains(&term) {
                        terms.push(term.clone());
                    }
                }
                _ => log::warn!("knowledge token {word:?} of term {term:?} is not in the vocabulary"),
            }
        }
    }
    KnowledgeVocab {
        token_ids: source_terms.keys().copied().collect(),
        source_terms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_list_parsing_normalises() {
        let got = parse_term_list("- Hypertension\n2. HEADACHE \n  headache\n\n");
        assert_eq!(got.into_iter().collect::<Vec<_>>(), ["headache", "hypertension"]);
    }

    #[test]
    fn normalisation_collapses_space() {
        assert_eq!(normalize_term("  Basal   Ganglia\tHemorrhage "), "basal ganglia hemorrhage");
    }

    #[test]
    fn empty_kb_gives_empty_vocab() {
        let t = Tokenizer::build(["a b"], &[], 10);
        assert!(build_knowledge_vocab(&KnowledgeBase::default(), &t).is_empty());
    }
}
