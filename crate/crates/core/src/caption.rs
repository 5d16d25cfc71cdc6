//! IQR anomaly detection over lab series and the fixed caption templates.

use serde::{Deserialize, Serialize};

use crate::corpus::LabSeries;
use crate::{Error, Result};

/// Quantile by linear interpolation between order statistics of `sorted`
/// (position `(n - 1) * p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(Q1 - 1.5 IQR, Q3 + 1.5 IQR)`.
pub fn iqr_fences(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Precondition("IQR fences need at least one value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    Ok((q1 - 1.5 * iqr, q3 + 1.5 * iqr))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureAnomaly {
    pub high_count: usize,
    pub low_count: usize,
    /// `None` when the feature has no valid steps.
    pub fences: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub features: Vec<FeatureAnomaly>,
}

/// Counts steps strictly outside each feature's own fences. Padded steps are
/// ignored.
pub fn detect_anomalies(labs: &LabSeries) -> AnomalyReport {
    let features = (0..labs.n_features())
        .map(|f| {
            let vals = labs.valid_values(f);
            match iqr_fences(&vals) {
                Ok((lo, hi)) => FeatureAnomaly {
                    high_count: vals.iter().filter(|&&v| v > hi).count(),
                    low_count: vals.iter().filter(|&&v| v < lo).count(),
                    fences: Some((lo, hi)),
                },
                Err(_) => FeatureAnomaly {
                    high_count: 0,
                    low_count: 0,
                    fences: None,
                },
            }
        })
        .collect();
    AnomalyReport { features }
}

/// One caption per feature, in feature order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionSet {
    pub captions: Vec<String>,
}

impl CaptionSet {
    /// The captions as one space-separated paragraph.
    pub fn joined(&self) -> String {
        self.captions.join(" ")
    }
}

pub fn caption_line(feature: &str, high: usize, low: usize) -> String {
    match (high, low) {
        (0, 0) => format!("{feature} is normal all the time."),
        (h, 0) => format!("{feature} is higher than normal {h} times."),
        (0, l) => format!("{feature} is lower than normal {l} times."),
        (h, l) => format!("{feature} is higher than normal {h} times and lower than normal {l} times."),
    }
}

pub fn caption(report: &AnomalyReport, feature_names: &[String]) -> Result<CaptionSet> {
    if report.features.len() != feature_names.len() {
        return Err(Error::Precondition(format!(
            "{} anomaly entries but {} feature names",
            report.features.len(),
            feature_names.len()
        )));
    }
    let captions = report
        .features
        .iter()
        .zip(feature_names)
        .map(|(a, name)| caption_line(name, a.high_count, a.low_count))
        .collect();
    Ok(CaptionSet { captions })
}

pub fn caption_labs(labs: &LabSeries) -> CaptionSet {
    caption(&detect_anomalies(labs), &labs.feature_names)
        .expect("report is built from the same series")
}

/// Inverse of [`caption_line`]: `(feature, high, low)`.
pub fn parse_caption(line: &str) -> Option<(String, usize, usize)> {
    if let Some(f) = line.strip_suffix(" is normal all the time.") {
        return Some((f.to_string(), 0, 0));
    }
    let body = line.strip_suffix(" times.")?;
    if let Some((head, low)) = body.split_once(" times and lower than normal ") {
        let (f, high) = head.rsplit_once(" is higher than normal ")?;
        let (h, l) = (high.parse().ok()?, low.parse().ok()?);
        return (h > 0 && l > 0).then(|| (f.to_string(), h, l));
    }
    if let Some((f, n)) = body.rsplit_once(" is higher than normal ") {
        let h: usize = n.parse().ok()?;
        return (h > 0).then(|| (f.to_string(), h, 0));
    }
    let (f, n) = body.rsplit_once(" is lower than normal ")?;
    let l: usize = n.parse().ok()?;
    (l > 0).then(|| (f.to_string(), 0, l))
}
