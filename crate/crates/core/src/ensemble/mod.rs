//! Weighted softmax ensemble, weight search, top-k metrics and reporting.
//!
//! The ensemble output for a video is `P = sum_i w_i * Pred_i`, renormalized
//! to sum to one so that any nonnegative, not-all-zero weights are valid.

mod metrics;
mod predictions;
mod report;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use metrics::{rank_of, topk_accuracy};
pub use predictions::{PredictionRow, PredictionSet};
pub use report::{report, MetricReport, MetricRow};

use crate::error::{Error, Result};

pub const DEFAULT_GRID_STEP: f64 = 0.05;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub path: String,
    pub weight: f64,
}

/// On-disk ensemble description: `{"members": [{"path", "weight"}, ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<EnsembleMember>,
}

impl EnsembleSpec {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Loads every member's predictions; relative paths resolve against `base`.
    pub fn load_members(&self, base: &Path) -> Result<Vec<(PredictionSet, f64)>> {
        self.members
            .iter()
            .map(|m| {
                let p = PathBuf::from(&m.path);
                let p = if p.is_absolute() { p } else { base.join(p) };
                Ok((PredictionSet::load(&p)?, m.weight))
            })
            .collect()
    }

    /// Applies the weighted ensemble to the members stored on disk.
    pub fn apply(&self, base: &Path) -> Result<PredictionSet> {
        let loaded = self.load_members(base)?;
        let members: Vec<_> = loaded.iter().map(|(p, w)| (p, *w)).collect();
        ensemble(&members)
    }
}

/// Checks that every set covers the same ids with the same class count.
fn check_members(sets: &[&PredictionSet]) -> Result<()> {
    let Some(first) = sets.first() else {
        return Err(Error::invalid("ensemble", "no members"));
    };
    let ids = first.index();
    for (i, s) in sets.iter().enumerate().skip(1) {
        if s.num_classes() != first.num_classes() {
            return Err(Error::invalid(
                "ensemble",
                format!(
                    "member {i} has {} classes, member 0 has {}",
                    s.num_classes(),
                    first.num_classes()
                ),
            ));
        }
        if s.len() != first.len() || s.rows.iter().any(|r| !ids.contains_key(r.id.as_str())) {
            return Err(Error::invalid(
                "ensemble",
                format!("member {i} covers a different set of video ids than member 0"),
            ));
        }
    }
    Ok(())
}

/// Weighted sum of member probabilities, renormalized per video.
///
/// Output rows follow the first member's id order.
pub fn ensemble(members: &[(&PredictionSet, f64)]) -> Result<PredictionSet> {
    let sets: Vec<&PredictionSet> = members.iter().map(|(s, _)| *s).collect();
    check_members(&sets)?;
    if let Some((_, w)) = members.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid(
            "ensemble",
            format!("weight {w} is not a nonnegative number"),
        ));
    }
    if members.iter().all(|(_, w)| *w == 0.0) {
        return Err(Error::invalid("ensemble", "all weights are zero"));
    }
    let indices: Vec<HashMap<&str, &[f64]>> = sets.iter().map(|s| s.index()).collect();
    let k = sets[0].num_classes();
    let total: f64 = members.iter().map(|(_, w)| w).sum();
    let rows = sets[0]
        .rows
        .iter()
        .map(|row| {
            let mut acc = vec![0.0; k];
            for ((_, w), index) in members.iter().zip(&indices) {
                for (a, &p) in acc.iter_mut().zip(index[row.id.as_str()]) {
                    *a += w / total * p;
                }
            }
            // Member rows that are already probability vectors are left
            // untouched so that a one-hot weighting reproduces its member.
            let sum: f64 = acc.iter().sum();
            if sum > 0.0 && (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                acc.iter_mut().for_each(|a| *a /= sum);
            }
            PredictionRow {
                id: row.id.clone(),
                probs: acc,
            }
        })
        .collect();
    Ok(PredictionSet { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSearch {
    pub weights: Vec<f64>,
    pub top1: f64,
    pub top5: f64,
}

/// Calls `visit` with every composition of `total` into `parts` nonnegative
/// integers, in lexicographic order.
fn compositions(
    parts: usize,
    total: usize,
    visit: &mut impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    fn rec(
        prefix: &mut Vec<usize>,
        parts: usize,
        left: usize,
        visit: &mut impl FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if prefix.len() + 1 == parts {
            prefix.push(left);
            visit(prefix)?;
            prefix.pop();
            return Ok(());
        }
        for c in 0..=left {
            prefix.push(c);
            rec(prefix, parts, left - c, visit)?;
            prefix.pop();
        }
        Ok(())
    }
    rec(&mut Vec::with_capacity(parts), parts, total, visit)
}

/// Exhaustive search over the weight simplex at resolution `step`.
///
/// Maximizes top-1 on `labels`, then top-5; remaining ties keep the
/// lexicographically smallest weight vector.
pub fn search_weights(
    members: &[&PredictionSet],
    labels: &HashMap<String, usize>,
    step: f64,
) -> Result<WeightSearch> {
    if !(2..=4).contains(&members.len()) {
        return Err(Error::invalid(
            "search_weights",
            format!("needs 2 to 4 members, got {}", members.len()),
        ));
    }
    check_members(members)?;
    let ticks = (1.0 / step).round();
    if !(step > 0.0 && ticks >= 1.0 && (ticks * step - 1.0).abs() < 1e-9) {
        return Err(Error::invalid(
            "search_weights",
            format!("step {step} does not divide 1"),
        ));
    }
    let ticks = ticks as usize;
    let mut best: Option<WeightSearch> = None;
    compositions(members.len(), ticks, &mut |counts| {
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / ticks as f64).collect();
        let pairs: Vec<_> = members
            .iter()
            .copied()
            .zip(weights.iter().copied())
            .collect();
        let fused = ensemble(&pairs)?;
        let top1 = topk_accuracy(&fused, labels, 1)?;
        let top5 = topk_accuracy(&fused, labels, 5)?;
        let better = match &best {
            None => true,
            Some(b) => top1 > b.top1 || (top1 == b.top1 && top5 > b.top5),
        };
        if better {
            best = Some(WeightSearch {
                weights,
                top1,
                top5,
            });
        }
        Ok(())
    })?;
    Ok(best.expect("the grid is never empty"))
}
