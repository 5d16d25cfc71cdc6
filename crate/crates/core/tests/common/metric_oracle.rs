use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rationale::corpus::LabelRegistry;
use rationale::evaluation::{bleu, Prf};
use serde_json::Value;

pub fn random_set(rng: &mut ChaCha8Rng, reg: &LabelRegistry, max: usize) -> Vec<String> {
    let k = rng.random_range(0..=max);
    let mut idx = sample(rng, reg.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| reg.label(i).to_string()).collect()
}

/// Label-major brute force: for every label scan every record.
pub fn brute_force(preds: &[Vec<String>], golds: &[Vec<String>], reg: &LabelRegistry) -> Prf {
    let frac = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let (mut tp_all, mut fp_all, mut fn_all) = (0u64, 0u64, 0u64);
    let (mut sum_p, mut sum_r, mut sum_f) = (0.0, 0.0, 0.0);
    for label in reg.labels() {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (p, g) in preds.iter().zip(golds) {
            let p: HashSet<&String> = p.iter().collect();
            let g: HashSet<&String> = g.iter().collect();
            match (p.contains(label), g.contains(label)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        sum_p += frac(tp, tp + fp);
        sum_r += frac(tp, tp + fn_);
        sum_f += frac(2 * tp, 2 * tp + fp + fn_);
    }
    let n = reg.len() as f64;
    Prf {
        micro_precision: frac(tp_all, tp_all + fp_all),
        micro_recall: frac(tp_all, tp_all + fn_all),
        micro_f1: frac(2 * tp_all, 2 * tp_all + fp_all + fn_all),
        macro_precision: sum_p / n,
        macro_recall: sum_r / n,
        macro_f1: sum_f / n,
    }
}

pub fn worksheet() -> Value {
    serde_json::from_str(include_str!("../fixtures/bleu_worksheet.json")).unwrap()
}

/// `(bleu from the hand-counted table, bleu computed by the library)`.
pub fn worksheet_bleu() -> (f64, f64, f64) {
    let w = worksheet();
    let texts = |k: &str| -> Vec<String> {
        w[k].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
    };
    let sheet = &w["worksheet"];
    let ints = |v: &Value| -> Vec<u64> { v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect() };
    let matched = ints(&sheet["corpus_matched"]);
    let total = ints(&sheet["corpus_total"]);
    for n in 0..4 {
        let per: u64 = sheet["per_sentence"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["matched"][n].as_u64().unwrap())
            .sum();
        assert_eq!(per, matched[n]);
    }
    let c = sheet["candidate_length"].as_u64().unwrap() as f64;
    let r = sheet["reference_length"].as_u64().unwrap() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    let log_mean = (0..4).map(|n| (matched[n] as f64 / total[n] as f64).ln()).sum::<f64>() / 4.0;
    let from_table = bp * log_mean.exp();
    let got = bleu(&texts("candidates"), &texts("references")).unwrap();
    (sheet["bleu"].as_f64().unwrap(), from_table, got)
}
