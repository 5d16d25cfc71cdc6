//! Target serialisation, the single source of truth for what the decoder is
//! trained to emit:
//!
//! ```text
//! Diagnoses: <label>; <label>; ... . <note rationale> <lab rationale>
//! ```
//!
//! An empty label set is written `Diagnoses: none .`. Labels appear in
//! registry order and never contain `;` or `.`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MARKER: &str = "Diagnoses:";
pub const NONE: &str = "none";

/// Which parts of the target are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Labels, note rationale, lab rationale.
    Full,
    /// Labels and lab rationale.
    LabRationale,
    /// Labels only.
    LabelsOnly,
}

pub fn diagnoses_clause(diagnoses: &[String]) -> String {
    if diagnoses.is_empty() {
        format!("{MARKER} {NONE} .")
    } else {
        format!("{MARKER} {} .", diagnoses.join("; "))
    }
}

pub fn serialize_target(
    diagnoses: &[String],
    note_rationale: Option<&str>,
    lab_rationale: Option<&str>,
    kind: TargetKind,
) -> Result<String> {
    let mut out = diagnoses_clause(diagnoses);
    let need = |r: Option<&str>, what: &str| {
        r.map(str::to_string)
            .ok_or_else(|| Error::Precondition(format!("target needs a {what} rationale")))
    };
    match kind {
        TargetKind::LabelsOnly => {}
        TargetKind::LabRationale => {
            out.push(' ');
            out.push_str(&need(lab_rationale, "lab")?);
        }
        TargetKind::Full => {
            out.push(' ');
            out.push_str(&need(note_rationale, "note")?);
            out.push(' ');
            out.push_str(&need(lab_rationale, "lab")?);
        }
    }
    Ok(out)
}
