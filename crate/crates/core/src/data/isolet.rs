//! ISOLET-style CSV: comma-separated reals followed by a 1-indexed class label.

use std::path::Path;

use super::{Dataset, Split};
use crate::{Error, Result};

pub const ISOLET_FEATURES: usize = 617;
pub const ISOLET_CLASSES: usize = 26;

/// Per-feature min-max statistics taken from the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaling {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl FeatureScaling {
    pub fn fit(rows: &[Vec<f32>]) -> Self {
        let n = rows.first().map_or(0, Vec::len);
        let mut min = vec![f32::INFINITY; n];
        let mut max = vec![f32::NEG_INFINITY; n];
        for r in rows {
            for (k, &v) in r.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Self { min, max }
    }

    /// Maps into `[0, 1]`; values beyond the training range are clamped and
    /// constant features map to 0.
    pub fn apply(&self, row: &[f32]) -> Vec<f32> {
        row.iter()
            .enumerate()
            .map(|(k, &v)| {
                let span = self.max[k] - self.min[k];
                if span > 0.0 {
                    ((v - self.min[k]) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Parses CSV text. With `scaling = None` the statistics are fitted on these rows.
pub fn parse_isolet(
    text: &str,
    split: Split,
    scaling: Option<&FeatureScaling>,
) -> Result<(Dataset, FeatureScaling)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != ISOLET_FEATURES + 1 {
            return Err(Error::Format(format!(
                "line {}: expected {} fields, got {}",
                line_no + 1,
                ISOLET_FEATURES + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f32>()
                .map_err(|_| Error::Format(format!("line {}: unparseable field {s:?}", line_no + 1)))
        };
        let row = fields[..ISOLET_FEATURES]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<_>>>()?;
        // The UCI files write labels as "26." so parse as a real first.
        let raw = parse(fields[ISOLET_FEATURES])?;
        if raw.fract() != 0.0 || raw < 1.0 || raw > ISOLET_CLASSES as f32 {
            return Err(Error::Format(format!("line {}: bad label {raw}", line_no + 1)));
        }
        rows.push(row);
        labels.push(raw as usize - 1);
    }
    if rows.is_empty() {
        return Err(Error::Data("ISOLET file has no rows".into()));
    }
    let scaling = scaling.cloned().unwrap_or_else(|| FeatureScaling::fit(&rows));
    let features = rows.iter().flat_map(|r| scaling.apply(r)).collect();
    let ds = Dataset::new(features, labels, ISOLET_FEATURES, ISOLET_CLASSES, split)?;
    Ok((ds, scaling))
}

pub fn load_isolet(path: &Path, split: Split, scaling: Option<&FeatureScaling>) -> Result<(Dataset, FeatureScaling)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_isolet(&text, split, scaling)
}
