use std::collections::HashMap;

use super::PredictionSet;
use crate::error::{Error, Result};

/// Zero-based rank of `label` in `probs`: classes sort by descending
/// probability, ties going to the lower class index.
pub fn rank_of(probs: &[f64], label: usize) -> usize {
    let p = probs[label];
    probs
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < label))
        .count()
}

/// Fraction of videos whose label is among the `k` highest-ranked classes.
pub fn topk_accuracy(
    preds: &PredictionSet,
    labels: &HashMap<String, usize>,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("topk_accuracy", "k must be at least 1"));
    }
    if preds.is_empty() {
        return Err(Error::invalid("topk_accuracy", "no predictions"));
    }
    let mut hits = 0usize;
    for row in &preds.rows {
        let &label = labels.get(&row.id).ok_or_else(|| {
            Error::invalid("topk_accuracy", format!("no label for video {}", row.id))
        })?;
        if label >= row.probs.len() {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: row.probs.len(),
            });
        }
        if rank_of(&row.probs, label) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}
