use std::collections::HashMap;
use std::path::Path;

use crate::model::tokenizer::split_words;
use crate::{Error, Result};

pub const NUM_LABELS: usize = 25;

const BUNDLED_LABELS: &str = include_str!("../../resources/labels.v1.json");

/// The fixed, ordered set of phenotype labels.
///
/// Order matters: diagnoses are serialised in registry order and macro
/// averages iterate over it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRegistry {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    normalized: HashMap<String, usize>,
}

impl LabelRegistry {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() != NUM_LABELS {
            return Err(Error::Schema(format!(
                "label registry must hold exactly {NUM_LABELS} labels, got {}",
                labels.len()
            )));
        }
        let mut index = HashMap::new();
        let mut normalized = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            if label.trim().is_empty() || label.contains(';') || label.contains('.') {
                return Err(Error::Schema(format!(
                    "label {label:?} is empty or contains a reserved separator (';' or '.')"
                )));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate label {label:?}")));
            }
            if normalized.insert(normalize_label(label), i).is_some() {
                return Err(Error::Schema(format!(
                    "label {label:?} collides with another after normalisation"
                )));
            }
        }
        Ok(Self {
            labels,
            index,
            normalized,
        })
    }

    /// The registry shipped with the crate (`resources/labels.v1.json`).
    pub fn bundled() -> Self {
        let labels: Vec<String> =
            serde_json::from_str(BUNDLED_LABELS).expect("bundled label registry is valid JSON");
        Self::new(labels).expect("bundled label registry is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let labels: Vec<String> = crate::io::read_json(path)?;
        Self::new(labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.labels)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Case- and spacing-insensitive lookup, used when parsing generations.
    pub fn find_normalized(&self, fragment: &str) -> Option<usize> {
        self.normalized.get(&normalize_label(fragment)).copied()
    }

    /// Sorts and deduplicates labels into registry order, rejecting unknowns.
    pub fn canonicalize(&self, labels: &[String]) -> Result<Vec<String>> {
        let mut idx = Vec::with_capacity(labels.len());
        for l in labels {
            match self.index_of(l) {
                Some(i) => idx.push(i),
                None => return Err(Error::Schema(format!("unknown label {l:?}"))),
            }
        }
        idx.sort_unstable();
        idx.dedup();
        Ok(idx.into_iter().map(|i| self.labels[i].clone()).collect())
    }

    pub fn indices(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.index_of(l)
                    .ok_or_else(|| Error::Schema(format!("unknown label {l:?}")))
            })
            .collect()
    }
}

/// Lowercased word tokens joined by single spaces.
pub fn normalize_label(s: &str) -> String {
    split_words(s).join(" ")
}
