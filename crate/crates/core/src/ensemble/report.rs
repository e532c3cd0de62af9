use std::collections::HashMap;
use std::fmt::Write as _;

use super::{topk_accuracy, PredictionSet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub top1: f64,
    pub top5: f64,
}

/// Top-1/top-5 accuracy per method, rendered like a leaderboard table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn render_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(["Method".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}", "Method", "Top-1", "Top-5");
        let _ = writeln!(out, "{}", "-".repeat(width + 16));
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:.4}  {:.4}", r.name, r.top1, r.top5);
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("method,top1,top5\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.4},{:.4}", r.name, r.top1, r.top5);
        }
        out
    }
}

/// Scores each named prediction set against `labels`.
pub fn report(
    rows: &[(String, &PredictionSet)],
    labels: &HashMap<String, usize>,
) -> Result<MetricReport> {
    if rows.is_empty() {
        return Err(Error::invalid("report", "no methods to report"));
    }
    let rows = rows
        .iter()
        .map(|(name, preds)| {
            Ok(MetricRow {
                name: name.clone(),
                top1: topk_accuracy(preds, labels, 1)?,
                top5: topk_accuracy(preds, labels, 5)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::PredictionRow;

    #[test]
    fn perfect_predictor_row() {
        let preds = PredictionSet::new(vec![PredictionRow {
            id: "a".into(),
            probs: vec![0.0, 1.0],
        }])
        .unwrap();
        let labels: HashMap<_, _> = [("a".to_string(), 1)].into();
        let r = report(&[("Ensemble".into(), &preds)], &labels).unwrap();
        let text = r.render_text();
        let line = text.lines().nth(2).unwrap();
        assert!(line.starts_with("Ensemble"));
        assert!(line.ends_with("1.0000  1.0000"), "{line}");
        assert_eq!(r.render_csv(), "method,top1,top5\nEnsemble,1.0000,1.0000\n");
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(report(&[], &HashMap::new()).is_err());
    }
}
