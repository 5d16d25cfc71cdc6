mod common;

use common::metric_oracle::{brute_force, random_set, worksheet_bleu};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rationale::corpus::LabelRegistry;
use rationale::evaluation::{bleu, micro_macro_prf, parse_diagnoses, ConfusionCounts};
use rationale::model::target::{serialize_target, TargetKind};

#[test]
fn prf_equals_brute_force_on_200_random_instances() {
    let reg = LabelRegistry::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let n = rng.random_range(1..40);
        let golds: Vec<_> = (0..n).map(|_| random_set(&mut rng, &reg, 4)).collect();
        let preds: Vec<_> = (0..n).map(|_| random_set(&mut rng, &reg, 4)).collect();
        let got = micro_macro_prf(&preds, &golds, &reg).unwrap();
        let want = brute_force(&preds, &golds, &reg);
        assert_eq!(got, want, "case {case}");
        for v in [
            got.micro_precision,
            got.micro_recall,
            got.micro_f1,
            got.macro_precision,
            got.macro_recall,
            got.macro_f1,
        ] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn hand_counted_single_record() {
    let reg = LabelRegistry::bundled();
    let (a, b, c) = (reg.label(0), reg.label(1), reg.label(2));
    let preds = vec![vec![a.to_string(), b.to_string()]];
    let golds = vec![vec![a.to_string(), c.to_string()]];
    let counts = ConfusionCounts::count(&preds, &golds, &reg).unwrap();
    let tp: u64 = counts.per_label.iter().map(|c| c.tp).sum();
    let fp: u64 = counts.per_label.iter().map(|c| c.fp).sum();
    let fn_: u64 = counts.per_label.iter().map(|c| c.fn_).sum();
    assert_eq!((tp, fp, fn_), (1, 1, 1));
    let m = micro_macro_prf(&preds, &golds, &reg).unwrap();
    assert_eq!((m.micro_precision, m.micro_recall, m.micro_f1), (0.5, 0.5, 0.5));
}

#[test]
fn perfect_predictions_score_one_everywhere() {
    let reg = LabelRegistry::bundled();
    let golds: Vec<Vec<String>> = reg.labels().iter().map(|l| vec![l.clone()]).collect();
    let m = micro_macro_prf(&golds, &golds, &reg).unwrap();
    assert_eq!(m, brute_force(&golds, &golds, &reg));
    assert_eq!(m.micro_f1, 1.0);
    assert_eq!(m.macro_precision, 1.0);
    assert_eq!(m.macro_recall, 1.0);
    assert_eq!(m.macro_f1, 1.0);
}

#[test]
fn length_mismatch_is_an_error() {
    let reg = LabelRegistry::bundled();
    assert!(micro_macro_prf(&[vec![]], &[], &reg).is_err());
}

#[test]
fn bleu_matches_manual_worksheet() {
    let (recorded, from_table, got) = worksheet_bleu();
    assert!((from_table - recorded).abs() < 1e-12);
    assert!((got - from_table).abs() < 1e-12, "bleu {got} vs worksheet {from_table}");
}

#[test]
fn bleu_identity_and_disjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let words = ["glucose", "high", "lab", "shows", "test", "low", "sodium", "."];
    for _ in 0..50 {
        let n = rng.random_range(1..4);
        let texts: Vec<String> = (0..n)
            .map(|_| {
                let len = rng.random_range(1..12);
                (0..len)
                    .map(|_| words[rng.random_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        assert!((bleu(&texts, &texts).unwrap() - 1.0).abs() < 1e-12, "{texts:?}");
    }
    let c = vec!["alpha beta gamma delta".to_string()];
    let r = vec!["one two three four".to_string()];
    assert_eq!(bleu(&c, &r).unwrap(), 0.0);
    assert!(bleu(&[], &[]).is_err());
}

#[test]
fn serialized_label_sets_parse_back() {
    let reg = LabelRegistry::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let d = random_set(&mut rng, &reg, reg.len());
        let text = serialize_target(&d, Some("Based on the medical notes, x."), Some("Lab test shows y."), TargetKind::Full)
            .unwrap();
        let parsed = parse_diagnoses(&text, &reg);
        assert!(!parsed.missing_marker);
        assert_eq!(parsed.unmatched, 0);
        assert_eq!(parsed.labels, d, "{text}");
    }
}

#[test]
fn parse_edge_cases() {
    let reg = LabelRegistry::bundled();
    let none = parse_diagnoses("Diagnoses: none .", &reg);
    assert!(none.labels.is_empty() && !none.missing_marker);
    let garbage = parse_diagnoses("the model rambled on", &reg);
    assert!(garbage.labels.is_empty() && garbage.missing_marker);
    let partial = parse_diagnoses(&format!("Diagnoses: {}; not a label .", reg.label(3)), &reg);
    assert_eq!(partial.labels.len(), 1);
    assert_eq!(partial.unmatched, 1);
}
