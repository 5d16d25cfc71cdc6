//! Synthetic corpus with planted, recoverable labels.
//!
//! Every label has a keyword phrase and a lab signature: label `i` pushes
//! feature `i % 13` above (`i < 13`) or below (`i >= 13`) its normal range
//! for a contiguous run of 4 to 12 steps. Each planted label is evidenced by
//! the note, by the labs, or by both, with equal probability, so neither
//! modality alone is sufficient.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, EhrRecord, LabSeries, LabelRegistry, NUM_LABELS};
use crate::{Error, Result};

/// Lab feature names with their normal ranges.
pub const LAB_FEATURES: [(&str, f64, f64); 13] = [
    ("Diastolic blood pressure", 55.0, 85.0),
    ("Fraction inspired oxygen", 0.21, 0.5),
    ("Glucose", 80.0, 140.0),
    ("Heart Rate", 60.0, 100.0),
    ("Mean blood pressure", 65.0, 100.0),
    ("Oxygen saturation", 92.0, 99.0),
    ("Respiratory rate", 12.0, 20.0),
    ("Systolic blood pressure", 100.0, 140.0),
    ("Temperature", 36.2, 37.6),
    ("pH", 7.35, 7.45),
    ("Glascow coma scale total", 13.0, 15.0),
    ("Potassium", 3.5, 5.0),
    ("Creatinine", 0.6, 1.2),
];

/// One keyword phrase per registry position.
pub const KEYWORDS: [&str; NUM_LABELS] = [
    "decreased urine output",
    "sudden left hemiparesis",
    "crushing chest pain",
    "irregular pulse",
    "chronic dialysis dependence",
    "chronic productive cough",
    "postoperative wound dehiscence",
    "complete heart block",
    "bilateral pitting edema",
    "prior coronary stenting",
    "diabetic foot ulcer",
    "metformin at home",
    "elevated cholesterol on statin",
    "home amlodipine therapy",
    "severe hyponatremia",
    "coffee ground emesis",
    "hypertensive nephropathy",
    "jaundice with ascites",
    "bibasilar crackles",
    "sinus congestion",
    "absent breath sounds",
    "lobar consolidation",
    "intubated for hypoxemia",
    "positive blood cultures",
    "cold mottled extremities",
];

const KEYWORD_SENTENCES: [&str; 5] = [
    "Patient presented with {}.",
    "Exam notable for {}.",
    "History significant for {}.",
    "Overnight the team documented {}.",
    "Admission assessment revealed {}.",
];

/// Sentences that carry no label information.
pub const DISTRACTORS: [&str; 12] = [
    "Family at bedside and updated on plan.",
    "Diet advanced as tolerated.",
    "Physical therapy consulted for mobility.",
    "Lines and drains reviewed this morning.",
    "Pain controlled with current regimen.",
    "Patient slept well overnight.",
    "Code status confirmed as full.",
    "Social work following for discharge planning.",
    "Skin intact without new lesions.",
    "Vaccination history is up to date.",
    "Patient ambulated in the hallway twice.",
    "Medication reconciliation completed.",
];

const MIN_STEPS: usize = 200;
const MAX_STEPS: usize = 1000;
const MIN_RUN: usize = 4;
const MAX_RUN: usize = 12;
/// Probability of carrying 0, 1, 2 or 3 labels.
const CARDINALITY: [f64; 4] = [0.15, 0.35, 0.30, 0.20];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    High,
    Low,
}

/// The lab feature and direction that signal label `label`.
pub fn lab_signature(label: usize) -> (usize, Direction) {
    let dir = if label < LAB_FEATURES.len() {
        Direction::High
    } else {
        Direction::Low
    };
    (label % LAB_FEATURES.len(), dir)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Evidence {
    Note,
    Lab,
    Both,
}

impl Evidence {
    pub fn in_note(self) -> bool {
        matches!(self, Evidence::Note | Evidence::Both)
    }

    pub fn in_lab(self) -> bool {
        matches!(self, Evidence::Lab | Evidence::Both)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedRun {
    pub label: usize,
    pub feature: usize,
    pub direction: Direction,
    pub start: usize,
    pub len: usize,
}

/// Ground truth kept alongside each generated record.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedTruth {
    pub record_id: String,
    /// `(registry index, evidence)` in registry order.
    pub labels: Vec<(usize, Evidence)>,
    pub runs: Vec<PlantedRun>,
}

pub fn generate_synthetic_corpus(n: usize, seed: u64, registry: &LabelRegistry) -> Result<Corpus> {
    Ok(generate_with_truth(n, seed, registry)?.0)
}

pub fn generate_with_truth(
    n: usize,
    seed: u64,
    registry: &LabelRegistry,
) -> Result<(Corpus, Vec<PlantedTruth>)> {
    if n == 0 {
        return Err(Error::Size("synthetic corpus needs n >= 1".into()));
    }
    let mut records = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (rec, truth) = generate_record(&mut rng, format!("rec-{seed}-{i:05}"), registry)?;
        records.push(rec);
        truths.push(truth);
    }
    Ok((Corpus::new(records, registry.clone(), seed)?, truths))
}

fn sample_cardinality(rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in CARDINALITY.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    CARDINALITY.len() - 1
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn generate_record(
    rng: &mut ChaCha8Rng,
    record_id: String,
    registry: &LabelRegistry,
) -> Result<(EhrRecord, PlantedTruth)> {
    let k = sample_cardinality(rng);
    let mut labels: Vec<usize> = sample(rng, NUM_LABELS, k).into_vec();
    labels.sort_unstable();
    let planted: Vec<(usize, Evidence)> = labels
        .iter()
        .map(|&l| {
            let e = match rng.random_range(0..3) {
                0 => Evidence::Note,
                1 => Evidence::Lab,
                _ => Evidence::Both,
            };
            (l, e)
        })
        .collect();

    let n_steps = rng.random_range(MIN_STEPS..=MAX_STEPS);
    let mut values: Vec<Vec<f64>> = LAB_FEATURES
        .iter()
        .map(|&(_, lo, hi)| (0..n_steps).map(|_| round3(rng.random_range(lo..=hi))).collect())
        .collect();

    // Each label gets its own third of the series so runs never overlap.
    let segment = n_steps / 3;
    let mut runs = Vec::new();
    for (slot, &(label, ev)) in planted.iter().enumerate() {
        if !ev.in_lab() {
            continue;
        }
        let (feature, direction) = lab_signature(label);
        let (_, lo, hi) = LAB_FEATURES[feature];
        let width = hi - lo;
        let len = rng.random_range(MIN_RUN..=MAX_RUN);
        let start = slot * segment + rng.random_range(0..=segment - len);
        for t in start..start + len {
            let excess = width * rng.random_range(1.5..2.5);
            values[feature][t] = round3(match direction {
                Direction::High => hi + excess,
                Direction::Low => lo - excess,
            });
        }
        runs.push(PlantedRun {
            label,
            feature,
            direction,
            start,
            len,
        });
    }

    let mut sentences: Vec<String> = planted
        .iter()
        .filter(|(_, e)| e.in_note())
        .map(|&(l, _)| {
            let t = KEYWORD_SENTENCES[rng.random_range(0..KEYWORD_SENTENCES.len())];
            t.replace("{}", KEYWORDS[l])
        })
        .collect();
    let n_distract = rng.random_range(2..=3);
    for j in sample(rng, DISTRACTORS.len(), n_distract) {
        sentences.push(DISTRACTORS[j].to_string());
    }
    // Fisher-Yates keeps keyword position uninformative.
    for i in (1..sentences.len()).rev() {
        let j = rng.random_range(0..=i);
        sentences.swap(i, j);
    }

    let names = LAB_FEATURES.iter().map(|(n, _, _)| n.to_string()).collect();
    let labs = LabSeries::new(names, values)?;
    let diagnoses = labels.iter().map(|&l| registry.label(l).to_string()).collect();
    let record = EhrRecord {
        record_id: record_id.clone(),
        note: sentences.join(" "),
        labs,
        diagnoses,
        note_rationale: None,
        lab_rationale: None,
    };
    Ok((
        record,
        PlantedTruth {
            record_id,
            labels: planted,
            runs,
        },
    ))
}

/// Labels whose keyword phrase occurs in `note` (case-insensitive).
pub fn keyword_labels(note: &str) -> Vec<usize> {
    let lower = note.to_lowercase();
    (0..NUM_LABELS)
        .filter(|&l| lower.contains(KEYWORDS[l]))
        .collect()
}
