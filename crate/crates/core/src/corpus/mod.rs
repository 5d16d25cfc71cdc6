//! EHR records, their JSONL wire format, padding/patching, splitting, and the
//! synthetic corpus generator.

mod patch;
mod registry;
mod split;
pub mod synth;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use patch::{pad_and_patch, unpatch, PatchGrid, NUM_PATCHES, PATCH_LEN, SERIES_LEN};
pub use registry::{normalize_label, LabelRegistry, NUM_LABELS};
pub use split::split_train_test;

/// Lab measurements for one stay: one row per feature, one column per step.
#[derive(Clone, Debug, PartialEq)]
pub struct LabSeries {
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// `false` marks padding steps.
    pub step_mask: Vec<bool>,
}

impl LabSeries {
    pub fn new(feature_names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if feature_names.len() != values.len() {
            return Err(Error::Schema(format!(
                "{} feature names but {} value rows",
                feature_names.len(),
                values.len()
            )));
        }
        let n_steps = values.first().map_or(0, Vec::len);
        if values.iter().any(|row| row.len() != n_steps) {
            return Err(Error::Schema("lab value rows differ in length".into()));
        }
        Ok(Self {
            feature_names,
            values,
            step_mask: vec![true; n_steps],
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_steps(&self) -> usize {
        self.step_mask.len()
    }

    pub fn n_valid(&self) -> usize {
        self.step_mask.iter().filter(|&&m| m).count()
    }

    /// Valid (unpadded) values of one feature, in time order.
    pub fn valid_values(&self, feature: usize) -> Vec<f64> {
        self.values[feature]
            .iter()
            .zip(&self.step_mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    }
}

/// Fills missing entries with the nearest observed value in the same row;
/// equidistant neighbours resolve to the earlier step. A row with no
/// observations becomes all zeros.
pub fn fill_nearest(row: &[Option<f64>]) -> Vec<f64> {
    let n = row.len();
    let mut prev = vec![None; n];
    let mut last = None;
    for i in 0..n {
        if row[i].is_some() {
            last = Some(i);
        }
        prev[i] = last;
    }
    let mut next = None;
    let mut out = vec![0.0; n];
    for i in (0..n).rev() {
        if row[i].is_some() {
            next = Some(i);
        }
        let pick = match (prev[i], next) {
            (Some(p), Some(q)) => {
                if i - p <= q - i {
                    Some(p)
                } else {
                    Some(q)
                }
            }
            (Some(p), None) => Some(p),
            (None, Some(q)) => Some(q),
            (None, None) => None,
        };
        out[i] = pick.and_then(|j| row[j]).unwrap_or(0.0);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EhrRecord {
    pub record_id: String,
    pub note: String,
    pub labs: LabSeries,
    /// Registry-ordered, duplicate-free.
    pub diagnoses: Vec<String>,
    pub note_rationale: Option<String>,
    pub lab_rationale: Option<String>,
}

impl EhrRecord {
    pub fn has_rationales(&self) -> bool {
        self.note_rationale.is_some() && self.lab_rationale.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub records: Vec<EhrRecord>,
    pub registry: LabelRegistry,
    pub split_seed: u64,
}

impl Corpus {
    pub const DEFAULT_SPLIT_SEED: u64 = 7;

    pub fn new(records: Vec<EhrRecord>, registry: LabelRegistry, split_seed: u64) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::Schema(format!("duplicate record id {:?}", r.record_id)));
            }
            validate_record(r, &registry)?;
        }
        Ok(Self {
            records,
            registry,
            split_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_records(&self, records: Vec<EhrRecord>) -> Self {
        Self {
            records,
            registry: self.registry.clone(),
            split_seed: self.split_seed,
        }
    }
}

fn validate_record(r: &EhrRecord, registry: &LabelRegistry) -> Result<()> {
    let canonical = registry.canonicalize(&r.diagnoses)?;
    if canonical != r.diagnoses {
        return Err(Error::Schema(format!(
            "record {:?}: diagnoses must be unique and in registry order",
            r.record_id
        )));
    }
    if r.lab_rationale.is_some() && r.note_rationale.is_none() {
        return Err(Error::Schema(format!(
            "record {:?}: lab rationale present without a note rationale",
            r.record_id
        )));
    }
    Ok(())
}

/// One JSONL line. Field order here is the on-disk key order.
#[derive(Serialize, Deserialize)]
struct WireRecord {
    id: String,
    note: String,
    lab_features: Vec<String>,
    lab_values: Vec<Vec<Option<f64>>>,
    diagnoses: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale_lab: Option<String>,
}

fn to_wire(r: &EhrRecord) -> WireRecord {
    WireRecord {
        id: r.record_id.clone(),
        note: r.note.clone(),
        lab_features: r.labs.feature_names.clone(),
        lab_values: r
            .labs
            .values
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&r.labs.step_mask)
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| Some(v))
                    .collect()
            })
            .collect(),
        diagnoses: r.diagnoses.clone(),
        rationale_note: r.note_rationale.clone(),
        rationale_lab: r.lab_rationale.clone(),
    }
}

fn from_wire(w: WireRecord, registry: &LabelRegistry) -> Result<EhrRecord> {
    for d in &w.diagnoses {
        if registry.index_of(d).is_none() {
            return Err(Error::Schema(format!(
                "record {:?} references unknown label {d:?}",
                w.id
            )));
        }
    }
    let values = w.lab_values.iter().map(|row| fill_nearest(row)).collect();
    let labs = LabSeries::new(w.lab_features, values)?;
    Ok(EhrRecord {
        record_id: w.id,
        note: w.note,
        labs,
        diagnoses: registry.canonicalize(&w.diagnoses)?,
        note_rationale: w.rationale_note,
        lab_rationale: w.rationale_lab,
    })
}

/// Parses JSONL text. Blank lines are ignored.
pub fn parse_corpus(text: &str, registry: &LabelRegistry, split_seed: u64) -> Result<Corpus> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(from_wire(wire, registry)?);
    }
    Corpus::new(records, registry.clone(), split_seed)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    load_corpus_with(path, &LabelRegistry::bundled(), Corpus::DEFAULT_SPLIT_SEED)
}

pub fn load_corpus_with(path: &Path, registry: &LabelRegistry, split_seed: u64) -> Result<Corpus> {
    let text = crate::io::read_to_string(path)?;
    parse_corpus(&text, registry, split_seed)
}

/// Renders the corpus as JSONL; byte-identical for equal corpora.
pub fn render_corpus(corpus: &Corpus) -> Result<String> {
    let mut out = String::new();
    for r in &corpus.records {
        out.push_str(&serde_json::to_string(&to_wire(r))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    crate::io::atomic_write(path, render_corpus(corpus)?.as_bytes())
}
