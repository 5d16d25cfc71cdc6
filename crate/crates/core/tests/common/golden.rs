use std::path::PathBuf;

use rationale::caption::caption_labs;
use rationale::corpus::{EhrRecord, LabSeries};
use rationale::teacher::prompts::{build_lab_rationale_prompt, build_note_rationale_prompt, Exemplars};

pub const NOTE_INSTRUCTION: &str = "Please review the patient's medical records. Adhere to the provided format to craft a succinct 100-word rationale for diagnosing these conditions (Start with \"Based on the medical notes...\"). If the diagnosis indicates \"no disease was diagnosed,\" the rationale must state \"no disease was diagnosed.\" Otherwise, provide a comprehensive rationale for the diagnosis.";
pub const LAB_INSTRUCTION: &str = "Please review the patient's medical notes, laboratory test anomaly results, and existing rationales in the medical record. Construct a concise, one-sentence rationale, limited to max 50 words, that accurately describes a diagnosed condition based on descriptions of laboratory test abnormalities (Start with \"Lab test shows...\"). Pay close attention to potential inaccuracies in the lab descriptions.";
pub const NOTE_RATIONALE: &str = "Based on the medical notes, polyuria suggests diabetes.";

pub fn exemplars() -> Exemplars {
    Exemplars {
        note_rationale: vec![
            "Based on the medical notes, the patient reports chest pain.".into(),
            "Based on the medical notes, no disease was diagnosed.".into(),
        ],
        lab_rationale: vec!["Lab test shows elevated troponin.".into()],
        term_extraction: vec![],
    }
}

pub fn record() -> EhrRecord {
    let mut glucose = vec![100.0; 12];
    glucose[3] = 400.0;
    glucose[7] = 380.0;
    let mut sodium = vec![140.0; 12];
    sodium[5] = 120.0;
    let labs = LabSeries::new(vec!["Glucose".into(), "Sodium".into()], vec![glucose, sodium]).unwrap();
    EhrRecord {
        record_id: "golden-1".into(),
        note: "Patient admitted with polyuria and confusion.".into(),
        labs,
        diagnoses: vec!["Diabetes mellitus".into(), "Hyponatremia".into()],
        note_rationale: None,
        lab_rationale: None,
    }
}

pub fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("resources/golden").join(name)
}

pub fn note_prompt() -> String {
    build_note_rationale_prompt(&record(), &exemplars()).unwrap()
}

pub fn lab_prompt() -> String {
    let r = record();
    build_lab_rationale_prompt(&r, &caption_labs(&r.labs), Some(NOTE_RATIONALE), &exemplars()).unwrap()
}

/// Rendered prompt equals its golden file and carries the literal
/// instruction sentence.
pub fn matches(name: &str, rendered: &str, instruction: &str) -> Result<(), String> {
    let want = std::fs::read_to_string(path(name)).map_err(|e| format!("{name}: {e}"))?;
    if rendered != want {
        return Err(format!("{name} drifted from its golden file"));
    }
    if !rendered.contains(instruction) {
        return Err(format!("{name} lost its instruction sentence"));
    }
    Ok(())
}
