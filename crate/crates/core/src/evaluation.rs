//! Diagnosis parsing, multilabel precision/recall/F1, corpus BLEU, and model
//! evaluation.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EhrRecord, LabelRegistry};
use crate::model::target::{TargetKind, MARKER, NONE};
use crate::model::tokenizer::split_words;
use crate::model::{generate, InputMode, ModelInput, RationaleModel};
use crate::{Error, Result};

/// Labels recovered from a generated text.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedDiagnoses {
    /// Registry order, duplicate-free.
    pub labels: Vec<String>,
    /// Fragments that matched no label.
    pub unmatched: usize,
    /// Set when the text had no `Diagnoses:` marker.
    pub missing_marker: bool,
}

/// Reads the `Diagnoses: ... .` clause. Fragments are split on `;` and
/// matched against the registry ignoring case and spacing.
pub fn parse_diagnoses(text: &str, registry: &LabelRegistry) -> ParsedDiagnoses {
    let lower = text.to_lowercase();
    let marker = MARKER.to_lowercase();
    let Some(at) = lower.find(&marker) else {
        return ParsedDiagnoses {
            missing_marker: true,
            ..Default::default()
        };
    };
    let rest = &lower[at + marker.len()..];
    let clause = rest.find('.').map_or(rest, |end| &rest[..end]);
    if clause.trim() == NONE {
        return ParsedDiagnoses::default();
    }
    let mut idx = Vec::new();
    let mut unmatched = 0;
    for frag in clause.split(';') {
        if split_words(frag).is_empty() {
            continue;
        }
        match registry.find_normalized(frag) {
            Some(i) => idx.push(i),
            None => unmatched += 1,
        }
    }
    idx.sort_unstable();
    idx.dedup();
    ParsedDiagnoses {
        labels: idx.into_iter().map(|i| registry.label(i).to_string()).collect(),
        unmatched,
        missing_marker: false,
    }
}

/// The text after the diagnoses clause, split into the note rationale and
/// the lab rationale (which starts at "lab test shows").
pub fn split_rationales(text: &str) -> (String, String) {
    let lower = text.to_lowercase();
    let body = match lower.find(&MARKER.to_lowercase()) {
        Some(at) => {
            let rest = &lower[at..];
            rest.find('.').map_or("", |end| &rest[end + 1..])
        }
        None => lower.as_str(),
    };
    match body.find("lab test shows") {
        Some(i) => (body[..i].trim().to_string(), body[i..].trim().to_string()),
        None => (body.trim().to_string(), String::new()),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_label: Vec<LabelCounts>,
}

impl ConfusionCounts {
    pub fn count(preds: &[Vec<String>], golds: &[Vec<String>], registry: &LabelRegistry) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(Error::Precondition(format!(
                "{} predictions but {} gold sets",
                preds.len(),
                golds.len()
            )));
        }
        let mut per_label = vec![LabelCounts::default(); registry.len()];
        for (p, g) in preds.iter().zip(golds) {
            let p = registry.indices(&registry.canonicalize(p)?)?;
            let g = registry.indices(&registry.canonicalize(g)?)?;
            for &i in &p {
                if g.contains(&i) {
                    per_label[i].tp += 1;
                } else {
                    per_label[i].fp += 1;
                }
            }
            for &i in &g {
                if !p.contains(&i) {
                    per_label[i].fn_ += 1;
                }
            }
        }
        Ok(Self { per_label })
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2PR / (P + R)` written over the counts, `2tp / (2tp + fp + fn)`, so
/// that the only rounding is the final division.
fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Micro scores pool counts over labels; macro scores average per-label
/// scores over every registry label, with 0/0 taken as 0.
pub fn micro_macro_prf(
    preds: &[Vec<String>],
    golds: &[Vec<String>],
    registry: &LabelRegistry,
) -> Result<Prf> {
    Ok(prf_from_counts(&ConfusionCounts::count(preds, golds, registry)?))
}

pub fn prf_from_counts(counts: &ConfusionCounts) -> Prf {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for c in &counts.per_label {
        tp += c.tp;
        fp += c.fp;
        fn_ += c.fn_;
        let p = ratio(c.tp, c.tp + c.fp);
        let r = ratio(c.tp, c.tp + c.fn_);
        sp += p;
        sr += r;
        sf += f1(c.tp, c.fp, c.fn_);
    }
    let n = counts.per_label.len().max(1) as f64;
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    Prf {
        micro_precision: p,
        micro_recall: r,
        micro_f1: f1(tp, fp, fn_),
        macro_precision: sp / n,
        macro_recall: sr / n,
        macro_f1: sf / n,
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus BLEU-4 with clipped counts, uniform weights and the standard
/// brevity penalty; no smoothing. Orders longer than the longest candidate
/// are left out of the geometric mean, so a corpus of very short texts
/// still scores 1 against itself.
pub fn bleu(candidates: &[String], references: &[String]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Precondition("BLEU needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Precondition(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matched = [0u64; 4];
    let mut total = [0u64; 4];
    let (mut c_len, mut r_len) = (0u64, 0u64);
    let mut longest = 0;
    for (c, r) in candidates.iter().zip(references) {
        let ct = split_words(c);
        let rt = split_words(r);
        c_len += ct.len() as u64;
        r_len += rt.len() as u64;
        longest = longest.max(ct.len());
        for n in 1..=4 {
            let cg = ngrams(&ct, n);
            let rg = ngrams(&rt, n);
            for (g, &k) in &cg {
                matched[n - 1] += k.min(rg.get(g).copied().unwrap_or(0)) as u64;
                total[n - 1] += k as u64;
            }
        }
    }
    if c_len == 0 {
        return Ok(0.0);
    }
    let orders = longest.min(4);
    let mut log_sum = 0.0;
    for n in 0..orders {
        if matched[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(bp * (log_sum / orders as f64).exp())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub prf: Prf,
    /// BLEU of the full generated rationale text, when rationales are
    /// generated.
    pub bleu: Option<f64>,
    pub bleu_note: Option<f64>,
    pub bleu_lab: Option<f64>,
    pub n_records: usize,
    pub unparseable: usize,
    pub unmatched_fragments: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn micro_f1(&self) -> f64 {
        self.prf.micro_f1
    }
}

/// Produces the generated text for a record.
pub trait TextGenerator: Sync {
    fn generate_text(&self, record: &EhrRecord) -> Result<String>;
}

/// Greedy decoding with a trained model.
pub struct ModelGenerator<'a> {
    pub model: &'a RationaleModel,
    pub vk: &'a [usize],
    pub mode: InputMode,
}

impl TextGenerator for ModelGenerator<'_> {
    fn generate_text(&self, record: &EhrRecord) -> Result<String> {
        let input = ModelInput::from_record(record, &self.model.tokenizer)?;
        let max = self.model.config.max_target_tokens + 1;
        let ids = generate(self.model, &input, self.mode, self.vk, max)?;
        Ok(self.model.tokenizer.decode(&ids))
    }
}

/// Generates for every record (in parallel, merged in record order), parses
/// and scores. `kind` says which rationales the generator emits.
pub fn evaluate(
    generator: &dyn TextGenerator,
    test: &Corpus,
    kind: TargetKind,
    seed: u64,
) -> Result<MetricReport> {
    let texts: Vec<String> = test
        .records
        .par_iter()
        .map(|r| generator.generate_text(r))
        .collect::<Result<_>>()?;
    score_texts(&texts, test, kind, seed)
}

pub fn evaluate_model(
    model: &RationaleModel,
    test: &Corpus,
    vk: &[usize],
    mode: InputMode,
    kind: TargetKind,
    seed: u64,
) -> Result<MetricReport> {
    evaluate(&ModelGenerator { model, vk, mode }, test, kind, seed)
}

pub fn score_texts(texts: &[String], test: &Corpus, kind: TargetKind, seed: u64) -> Result<MetricReport> {
    let mut preds = Vec::with_capacity(texts.len());
    let (mut unparseable, mut unmatched) = (0, 0);
    for t in texts {
        let p = parse_diagnoses(t, &test.registry);
        unparseable += p.missing_marker as usize;
        unmatched += p.unmatched;
        preds.push(p.labels);
    }
    let golds: Vec<Vec<String>> = test.records.iter().map(|r| r.diagnoses.clone()).collect();
    let prf = micro_macro_prf(&preds, &golds, &test.registry)?;
    let mut report = MetricReport {
        prf,
        n_records: texts.len(),
        unparseable,
        unmatched_fragments: unmatched,
        seed,
        ..Default::default()
    };
    if texts.is_empty() || kind == TargetKind::LabelsOnly {
        return Ok(report);
    }
    let lower = |s: &Option<String>| s.clone().unwrap_or_default().to_lowercase();
    let (mut cand_m, mut cand_t) = (Vec::new(), Vec::new());
    for t in texts {
        let (m, lab) = split_rationales(t);
        cand_m.push(m);
        cand_t.push(lab);
    }
    let ref_m: Vec<String> = test.records.iter().map(|r| lower(&r.note_rationale)).collect();
    let ref_t: Vec<String> = test.records.iter().map(|r| lower(&r.lab_rationale)).collect();
    report.bleu_lab = Some(bleu(&cand_t, &ref_t)?);
    if kind == TargetKind::Full {
        report.bleu_note = Some(bleu(&cand_m, &ref_m)?);
        let join = |a: &[String], b: &[String]| -> Vec<String> {
            a.iter().zip(b).map(|(x, y)| format!("{x} {y}")).collect()
        };
        report.bleu = Some(bleu(&join(&cand_m, &cand_t), &join(&ref_m, &ref_t))?);
    } else {
        report.bleu = report.bleu_lab;
    }
    Ok(report)
}

/// Mean and sample standard deviation of a metric across runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub micro_precision: MeanStd,
    pub micro_recall: MeanStd,
    pub micro_f1: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    pub bleu: Option<MeanStd>,
}

pub fn aggregate(reports: &[MetricReport]) -> AggregateReport {
    let col = |f: fn(&MetricReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    let bleus: Option<Vec<f64>> = reports.iter().map(|r| r.bleu).collect();
    AggregateReport {
        n_runs: reports.len(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        micro_precision: col(|r| r.prf.micro_precision),
        micro_recall: col(|r| r.prf.micro_recall),
        micro_f1: col(|r| r.prf.micro_f1),
        macro_precision: col(|r| r.prf.macro_precision),
        macro_recall: col(|r| r.prf.macro_recall),
        macro_f1: col(|r| r.prf.macro_f1),
        bleu: bleus.filter(|b| !b.is_empty()).map(|b| MeanStd::of(&b)),
    }
}
