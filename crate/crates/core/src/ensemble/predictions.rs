use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class probabilities of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub probs: Vec<f64>,
}

/// Per-video probability vectors produced by one model over a fixed clip list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSet {
    pub rows: Vec<PredictionRow>,
}

impl PredictionSet {
    pub fn new(rows: Vec<PredictionRow>) -> Result<Self> {
        let set = PredictionSet { rows };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        let mut seen = std::collections::HashSet::new();
        for row in &self.rows {
            if row.probs.len() != k || k == 0 {
                return Err(Error::invalid(
                    "prediction set",
                    format!(
                        "video {} has {} classes, expected {k}",
                        row.id,
                        row.probs.len()
                    ),
                ));
            }
            if !seen.insert(row.id.as_str()) {
                return Err(Error::invalid(
                    "prediction set",
                    format!("duplicate video id {}", row.id),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.rows.first().map_or(0, |r| r.probs.len())
    }

    pub fn index(&self) -> HashMap<&str, &[f64]> {
        self.rows
            .iter()
            .map(|r| (r.id.as_str(), r.probs.as_slice()))
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<PredictionRow>>>()?;
        PredictionSet::new(rows).map_err(|e| Error::format(path, e.to_string()))
    }
}
