use numerics::Real;

use super::tokenizer::Tokenizer;
use crate::caption::quantile_sorted;
use crate::corpus::{pad_and_patch, EhrRecord, LabSeries, NUM_PATCHES, PATCH_LEN};
use crate::Result;

/// Patch rows ready for the lab encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct LabInput {
    /// `[NUM_PATCHES, PATCH_LEN * n_features]`, row-major, feature-major
    /// within a row.
    pub values: Vec<Real>,
    pub patch_mask: Vec<bool>,
}

/// Everything the model reads from one record.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub note_ids: Vec<usize>,
    pub lab: LabInput,
}

impl ModelInput {
    pub fn from_record(record: &EhrRecord, tokenizer: &Tokenizer) -> Result<Self> {
        Ok(Self {
            note_ids: tokenizer.encode(&record.note),
            lab: robust_scaled_patches(&record.labs)?,
        })
    }
}

/// Pads and patches the series after centring each feature on its median
/// and dividing by its interquartile range (1 when the range is zero).
/// Padded steps stay 0.
pub fn robust_scaled_patches(labs: &LabSeries) -> Result<LabInput> {
    let mut scaled = labs.clone();
    for f in 0..labs.n_features() {
        let mut vals = labs.valid_values(f);
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(f64::total_cmp);
        let median = quantile_sorted(&vals, 0.5);
        let iqr = quantile_sorted(&vals, 0.75) - quantile_sorted(&vals, 0.25);
        let scale = if iqr > 1e-12 { iqr } else { 1.0 };
        for (v, &m) in scaled.values[f].iter_mut().zip(&labs.step_mask) {
            *v = if m { (*v - median) / scale } else { 0.0 };
        }
    }
    let grid = pad_and_patch(&scaled)?;
    let width = PATCH_LEN * labs.n_features();
    let mut values = Vec::with_capacity(NUM_PATCHES * width);
    for row in &grid.values {
        values.extend(row.iter().map(|&v| v as Real));
    }
    Ok(LabInput {
        values,
        patch_mask: grid.patch_mask,
    })
}
