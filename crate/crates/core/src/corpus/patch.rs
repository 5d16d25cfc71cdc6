use super::LabSeries;
use crate::{Error, Result};

pub const SERIES_LEN: usize = 1000;
pub const PATCH_LEN: usize = 8;
pub const NUM_PATCHES: usize = SERIES_LEN / PATCH_LEN;

/// A lab series padded to [`SERIES_LEN`] steps and cut into
/// [`NUM_PATCHES`] patches of [`PATCH_LEN`] steps.
///
/// `values` holds one row per patch; within a row the layout is
/// feature-major: `row[f * PATCH_LEN + s]` is feature `f` at step
/// `patch * PATCH_LEN + s`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub step_mask: Vec<bool>,
    /// A patch is valid when at least one of its steps is real data.
    pub patch_mask: Vec<bool>,
}

impl PatchGrid {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row_width(&self) -> usize {
        self.n_features() * PATCH_LEN
    }

    pub fn n_valid_steps(&self) -> usize {
        self.step_mask.iter().filter(|&&m| m).count()
    }
}

pub fn pad_and_patch(labs: &LabSeries) -> Result<PatchGrid> {
    let n_steps = labs.n_steps();
    if n_steps > SERIES_LEN {
        return Err(Error::Truncation {
            n_steps,
            max: SERIES_LEN,
        });
    }
    let nf = labs.n_features();
    let mut step_mask = labs.step_mask.clone();
    step_mask.resize(SERIES_LEN, false);
    let mut values = vec![vec![0.0; nf * PATCH_LEN]; NUM_PATCHES];
    for (f, row) in labs.values.iter().enumerate() {
        for (t, &v) in row.iter().enumerate() {
            if step_mask[t] {
                values[t / PATCH_LEN][f * PATCH_LEN + t % PATCH_LEN] = v;
            }
        }
    }
    let patch_mask = step_mask
        .chunks(PATCH_LEN)
        .map(|c| c.iter().any(|&m| m))
        .collect();
    Ok(PatchGrid {
        feature_names: labs.feature_names.clone(),
        values,
        step_mask,
        patch_mask,
    })
}

/// Recovers the real (unpadded) prefix of the series.
pub fn unpatch(grid: &PatchGrid) -> LabSeries {
    let n = grid.n_valid_steps();
    let values = (0..grid.n_features())
        .map(|f| {
            (0..n)
                .map(|t| grid.values[t / PATCH_LEN][f * PATCH_LEN + t % PATCH_LEN])
                .collect()
        })
        .collect();
    LabSeries {
        feature_names: grid.feature_names.clone(),
        values,
        step_mask: vec![true; n],
    }
}
